#include "gprodom/odomnet.hpp"

#include <json.hpp>
#include <stdexcept>

namespace gprodom::net {

using nn::Tape;
using nn::Tensor;

std::string variant_id(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kDifferenceOnly: return "difference_only";
    case Variant::kSimilarityOnly: return "similarity_only";
    case Variant::kFeatureConcat: return "feature_concat";
  }
  throw std::logic_error("bad variant");
}

Variant variant_from_id(const std::string& id) {
  if (id == "full") return Variant::kFull;
  if (id == "difference_only") return Variant::kDifferenceOnly;
  if (id == "similarity_only") return Variant::kSimilarityOnly;
  if (id == "feature_concat") return Variant::kFeatureConcat;
  throw std::invalid_argument("unknown variant id: " + id);
}

std::string variant_label(Variant v) {
  switch (v) {
    case Variant::kFull: return "GPR-OdomNet";
    case Variant::kDifferenceOnly: return "Difference Only";
    case Variant::kSimilarityOnly: return "Similarity Only";
    case Variant::kFeatureConcat: return "Feature Concatenation";
  }
  throw std::logic_error("bad variant");
}

void NetConfig::validate() const {
  std::vector<std::string> bad;
  if (input_h < 32 || input_h % 32 != 0) bad.push_back("input_h must be a positive multiple of 32");
  if (input_w < 32 || input_w % 32 != 0) bad.push_back("input_w must be a positive multiple of 32");
  for (int i = 0; i < 4; ++i) {
    if (widths[static_cast<std::size_t>(i)] < 1) bad.push_back("widths must be positive");
    if (i > 0 && widths[static_cast<std::size_t>(i)] <= widths[static_cast<std::size_t>(i) - 1]) {
      bad.push_back("widths must be strictly increasing");
    }
    if (blocks[static_cast<std::size_t>(i)] < 1) bad.push_back("blocks must be >= 1 per stage");
  }
  if (diff_channels < 1) bad.push_back("diff_channels must be >= 1");
  if (sim_channels < 1) bad.push_back("sim_channels must be >= 1");
  if (head_hidden[0] < 1 || head_hidden[1] < 1) bad.push_back("head_hidden must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) bad.push_back("dropout must lie in [0,1)");
  if (attention_reduction < 1) bad.push_back("attention_reduction must be >= 1");
  if (bn_eps <= 0.0) bad.push_back("bn_eps must be positive");
  if (bn_momentum <= 0.0 || bn_momentum >= 1.0) bad.push_back("bn_momentum must lie in (0,1)");
  if (!bad.empty()) {
    std::string msg = "invalid network config:";
    for (const auto& b : bad) msg += " " + b + ";";
    throw std::invalid_argument(msg);
  }
}

std::string NetConfig::to_json() const {
  nlohmann::json j;
  j["input_h"] = input_h;
  j["input_w"] = input_w;
  j["widths"] = widths;
  j["blocks"] = blocks;
  j["diff_channels"] = diff_channels;
  j["sim_channels"] = sim_channels;
  j["head_hidden"] = head_hidden;
  j["dropout"] = dropout;
  j["attention_reduction"] = attention_reduction;
  j["bn_eps"] = bn_eps;
  j["bn_momentum"] = bn_momentum;
  j["variant"] = variant_id(variant);
  return j.dump(2);
}

NetConfig NetConfig::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  static const std::vector<std::string> known = {
      "input_h", "input_w", "widths", "blocks", "diff_channels", "sim_channels",
      "head_hidden", "dropout", "attention_reduction", "bn_eps", "bn_momentum", "variant"};
  std::string unknown;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      unknown += unknown.empty() ? it.key() : ", " + it.key();
    }
  }
  if (!unknown.empty()) throw std::invalid_argument("unknown network config keys: " + unknown);
  NetConfig cfg;
  if (j.contains("input_h")) cfg.input_h = j["input_h"].get<int>();
  if (j.contains("input_w")) cfg.input_w = j["input_w"].get<int>();
  if (j.contains("widths")) cfg.widths = j["widths"].get<std::array<int, 4>>();
  if (j.contains("blocks")) cfg.blocks = j["blocks"].get<std::array<int, 4>>();
  if (j.contains("diff_channels")) cfg.diff_channels = j["diff_channels"].get<int>();
  if (j.contains("sim_channels")) cfg.sim_channels = j["sim_channels"].get<int>();
  if (j.contains("head_hidden")) cfg.head_hidden = j["head_hidden"].get<std::array<int, 2>>();
  if (j.contains("dropout")) cfg.dropout = j["dropout"].get<double>();
  if (j.contains("attention_reduction")) cfg.attention_reduction = j["attention_reduction"].get<int>();
  if (j.contains("bn_eps")) cfg.bn_eps = j["bn_eps"].get<double>();
  if (j.contains("bn_momentum")) cfg.bn_momentum = j["bn_momentum"].get<double>();
  if (j.contains("variant")) cfg.variant = variant_from_id(j["variant"].get<std::string>());
  cfg.validate();
  return cfg;
}

Tensor bscans_to_tensor(const std::vector<const pre::BScan*>& scans) {
  if (scans.empty()) throw std::invalid_argument("empty B-scan batch");
  const int h = scans.front()->height, w = scans.front()->width;
  Tensor out = Tensor::zeros({static_cast<int>(scans.size()), 1, h, w});
  auto& v = out.values();
  std::size_t at = 0;
  for (const pre::BScan* s : scans) {
    if (s->height != h || s->width != w) {
      throw std::invalid_argument("B-scan extents differ within batch");
    }
    std::copy(s->data.begin(), s->data.end(), v.begin() + static_cast<std::ptrdiff_t>(at));
    at += s->data.size();
  }
  return out;
}

OdomNet::ConvLayer OdomNet::make_conv(const std::string& name, int c_out, int c_in, int k,
                                      int stride, int pad, bool bias, std::mt19937_64& rng) {
  ConvLayer l;
  l.w = store_.create(name + ".w", {c_out, c_in, k, k}, "he",
                      static_cast<std::int64_t>(c_in) * k * k, rng);
  if (bias) l.b = store_.create(name + ".b", {c_out}, "zeros", 0, rng);
  l.spec = nn::Conv2dSpec{stride, stride, pad, pad};
  return l;
}

OdomNet::BnLayer OdomNet::make_bn(const std::string& name, int channels) {
  BnLayer l;
  std::mt19937_64 unused(0);
  l.gamma = store_.create(name + ".gamma", {channels}, "ones", 0, unused);
  l.beta = store_.create(name + ".beta", {channels}, "zeros", 0, unused);
  l.mean = store_.create_buffer(name + ".running_mean", {channels}, 0.0);
  l.var = store_.create_buffer(name + ".running_var", {channels}, 1.0);
  return l;
}

OdomNet::CbrLayer OdomNet::make_cbr(const std::string& name, int c_out, int c_in, int k, int stride,
                                    int pad, std::mt19937_64& rng) {
  CbrLayer l;
  l.conv = make_conv(name + ".conv", c_out, c_in, k, stride, pad, false, rng);
  l.bn = make_bn(name + ".bn", c_out);
  return l;
}

OdomNet::LbrdLayer OdomNet::make_lbrd(const std::string& name, int out_w, int in_w,
                                      std::mt19937_64& rng) {
  LbrdLayer l;
  l.w = store_.create(name + ".w", {out_w, in_w}, "he", in_w, rng);
  l.b = store_.create(name + ".b", {out_w}, "zeros", 0, rng);
  l.bn = make_bn(name + ".bn", out_w);
  return l;
}

int OdomNet::head_input_width() const {
  const int fs_len = cfg_.widths[3] * (cfg_.input_h / 32) * (cfg_.input_w / 32);
  switch (cfg_.variant) {
    case Variant::kFull: return cfg_.diff_channels + cfg_.sim_channels;
    case Variant::kDifferenceOnly: return cfg_.diff_channels;
    case Variant::kSimilarityOnly: return cfg_.sim_channels;
    case Variant::kFeatureConcat: return 2 * fs_len;
  }
  throw std::logic_error("bad variant");
}

OdomNet::OdomNet(const NetConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(init_seed);
  has_diff_ = cfg_.variant == Variant::kFull || cfg_.variant == Variant::kDifferenceOnly;
  has_sim_ = cfg_.variant == Variant::kFull || cfg_.variant == Variant::kSimilarityOnly;

  stem_ = make_conv("stem", cfg_.widths[0], 1, 3, 2, 1, false, rng);
  int c_in = cfg_.widths[0];
  for (int s = 0; s < 4; ++s) {
    const int c_out = cfg_.widths[static_cast<std::size_t>(s)];
    for (int b = 0; b < cfg_.blocks[static_cast<std::size_t>(s)]; ++b) {
      const std::string name = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      const int stride = b == 0 ? 2 : 1;
      const int in_w = b == 0 ? c_in : c_out;
      ResBlock blk;
      blk.bn1 = make_bn(name + ".bn1", in_w);
      blk.conv1 = make_conv(name + ".conv1", c_out, in_w, 3, stride, 1, false, rng);
      blk.bn2 = make_bn(name + ".bn2", c_out);
      blk.conv2 = make_conv(name + ".conv2", c_out, c_out, 3, 1, 1, false, rng);
      if (stride != 1 || in_w != c_out) {
        blk.proj = make_conv(name + ".proj", c_out, in_w, 1, stride, 0, false, rng);
      }
      stages_[static_cast<std::size_t>(s)].push_back(std::move(blk));
    }
    c_in = c_out;
  }

  if (has_diff_) {
    comp1_ = make_conv("compress.p1", cfg_.diff_channels, cfg_.widths[0], 1, 1, 0, false, rng);
    comp2_ = make_conv("compress.p2", cfg_.diff_channels, cfg_.widths[1], 1, 1, 0, false, rng);
    comp3_ = make_conv("compress.p3", cfg_.diff_channels, cfg_.widths[2], 1, 1, 0, false, rng);
    comp_cbr_ = make_cbr("compress.cbr", cfg_.diff_channels, cfg_.diff_channels, 3, 1, 1, rng);

    diff_cbr1_ = make_cbr("diff.cbr1", cfg_.diff_channels, cfg_.diff_channels, 3, 1, 1, rng);
    diff_cbr2_ = make_cbr("diff.cbr2", cfg_.diff_channels, cfg_.diff_channels, 3, 1, 1, rng);
    const int reduced = std::max(1, cfg_.diff_channels / cfg_.attention_reduction);
    ca_conv1_ = make_conv("diff.ca.conv1", reduced, cfg_.diff_channels, 1, 1, 0, true, rng);
    ca_conv2_ = make_conv("diff.ca.conv2", cfg_.diff_channels, reduced, 1, 1, 0, true, rng);
    sa_conv_ = make_conv("diff.sa.conv", 1, cfg_.diff_channels, 7, 1, 3, true, rng);
  }
  if (has_sim_) {
    sim_cbr_ = make_cbr("sim.cbr", cfg_.sim_channels, 1, 3, 1, 1, rng);
  }

  const int head_in = head_input_width();
  head1_ = make_lbrd("head.lbrd1", cfg_.head_hidden[0], head_in, rng);
  head2_ = make_lbrd("head.lbrd2", cfg_.head_hidden[1], cfg_.head_hidden[0], rng);
  head_out_w_ = store_.create("head.out.w", {1, cfg_.head_hidden[1]}, "he", cfg_.head_hidden[1], rng);
  head_out_b_ = store_.create("head.out.b", {1}, "zeros", 0, rng);
}

Tensor OdomNet::apply_conv(const ConvLayer& l, const Tensor& x, Tape* tape) {
  return nn::conv2d(x, l.w, l.b, l.spec, tape);
}

Tensor OdomNet::apply_bn(BnLayer& l, const Tensor& x, bool training, Tape* tape) {
  return nn::batch_norm(x, l.gamma, l.beta, l.mean, l.var, cfg_.bn_eps, cfg_.bn_momentum, training,
                        tape);
}

Tensor OdomNet::apply_cbr(CbrLayer& l, const Tensor& x, bool training, Tape* tape) {
  return nn::relu(apply_bn(l.bn, apply_conv(l.conv, x, tape), training, tape), tape);
}

// pre-activation residual block: out = shortcut + conv2(relu(bn2(conv1(relu(bn1(x))))))
Tensor OdomNet::apply_block(ResBlock& blk, const Tensor& x, bool training, Tape* tape) {
  Tensor pre = nn::relu(apply_bn(blk.bn1, x, training, tape), tape);
  Tensor shortcut = blk.proj ? apply_conv(*blk.proj, pre, tape) : x;
  Tensor h = apply_conv(blk.conv1, pre, tape);
  h = nn::relu(apply_bn(blk.bn2, h, training, tape), tape);
  h = apply_conv(blk.conv2, h, tape);
  return nn::add(shortcut, h, tape);
}

FeaturePyramid OdomNet::extract_features(const Tensor& input, bool training, Tape* tape) {
  if (input.rank() != 4 || input.extent(1) != 1 || input.extent(2) != cfg_.input_h ||
      input.extent(3) != cfg_.input_w) {
    throw std::invalid_argument("network input must be N x 1 x " + std::to_string(cfg_.input_h) +
                                " x " + std::to_string(cfg_.input_w) + ", got " +
                                nn::shape_str(input.shape()));
  }
  FeaturePyramid pyr;
  Tensor h = apply_conv(stem_, input, tape);
  for (int s = 0; s < 4; ++s) {
    for (auto& blk : stages_[static_cast<std::size_t>(s)]) h = apply_block(blk, h, training, tape);
    if (s == 0) pyr.f1 = h;
    if (s == 1) pyr.f2 = h;
    if (s == 2) pyr.f3 = h;
    if (s == 3) pyr.f4 = h;
  }
  const int n = input.extent(0);
  pyr.f_s = nn::reshape(pyr.f4, {n, static_cast<int>(pyr.f4.size() / n)}, tape);
  if (has_diff_) {
    Tensor p1 = nn::avg_pool(apply_conv(comp1_, pyr.f1, tape), 4, 4, tape);
    Tensor p2 = nn::avg_pool(apply_conv(comp2_, pyr.f2, tape), 2, 2, tape);
    Tensor p3 = apply_conv(comp3_, pyr.f3, tape);
    Tensor sum = nn::add(nn::add(p1, p2, tape), p3, tape);
    pyr.f_d = apply_cbr(comp_cbr_, sum, training, tape);
  }
  return pyr;
}

OdomNet::DiffTrace OdomNet::difference_branch_trace(const Tensor& fd_prev, const Tensor& fd_cur,
                                                    bool training, Tape* tape) {
  if (!has_diff_) throw std::logic_error("variant has no difference branch");
  DiffTrace t;
  t.delta = nn::abs_diff(fd_cur, fd_prev, tape);
  t.conv = apply_cbr(diff_cbr2_, apply_cbr(diff_cbr1_, t.delta, training, tape), training, tape);
  Tensor gap = nn::global_avg_pool(t.conv, tape);
  Tensor ca = apply_conv(ca_conv2_, nn::relu(apply_conv(ca_conv1_, gap, tape), tape), tape);
  t.channel_w = nn::sigmoid(ca, tape);
  t.spatial_w = nn::sigmoid(apply_conv(sa_conv_, t.conv, tape), tape);
  t.weighted = nn::mul_bcast(nn::mul_bcast(t.conv, t.channel_w, tape), t.spatial_w, tape);
  Tensor pooled = nn::global_avg_pool(t.weighted, tape);
  t.descriptor = nn::reshape(pooled, {t.weighted.extent(0), t.weighted.extent(1)}, tape);
  return t;
}

Tensor OdomNet::difference_descriptor(const Tensor& fd_prev, const Tensor& fd_cur, bool training,
                                      Tape* tape) {
  return difference_branch_trace(fd_prev, fd_cur, training, tape).descriptor;
}

Tensor OdomNet::similarity_descriptor(const Tensor& fs_prev, const Tensor& fs_cur, bool training,
                                      Tape* tape) {
  if (!has_sim_) throw std::logic_error("variant has no similarity branch");
  const int n = fs_prev.extent(0);
  const int c = cfg_.widths[3];
  const int h = cfg_.input_h / 32;
  const int w = cfg_.input_w / 32;
  Tensor a = nn::reshape(fs_prev, {n, c, h, w}, tape);
  Tensor b = nn::reshape(fs_cur, {n, c, h, w}, tape);
  Tensor cs = nn::cosine_similarity_map(a, b, tape);
  Tensor lifted = apply_cbr(sim_cbr_, cs, training, tape);
  Tensor pooled = nn::global_avg_pool(lifted, tape);
  return nn::reshape(pooled, {n, cfg_.sim_channels}, tape);
}

Tensor OdomNet::regression_head(const Tensor& features, bool training, Tape* tape,
                                std::mt19937_64* dropout_rng) {
  if (training && dropout_rng == nullptr) {
    throw std::invalid_argument("training-mode head requires a seeded rng for dropout");
  }
  if (features.rank() != 2 || features.extent(1) != head_input_width()) {
    throw std::invalid_argument("head input must be N x " + std::to_string(head_input_width()) +
                                ", got " + nn::shape_str(features.shape()));
  }
  auto lbrd = [&](LbrdLayer& l, const Tensor& x) {
    Tensor h = nn::linear(x, l.w, l.b, tape);
    h = apply_bn(l.bn, h, training, tape);
    h = nn::relu(h, tape);
    return nn::dropout(h, cfg_.dropout, training, dropout_rng, tape);
  };
  Tensor h = lbrd(head1_, features);
  h = lbrd(head2_, h);
  Tensor out = nn::linear(h, head_out_w_, head_out_b_, tape);
  return nn::reshape(out, {features.extent(0)}, tape);
}

Tensor OdomNet::forward_pair(const Tensor& prev, const Tensor& cur, bool training, Tape* tape,
                             std::mt19937_64* dropout_rng) {
  FeaturePyramid pp = extract_features(prev, training, tape);
  FeaturePyramid pc = extract_features(cur, training, tape);
  Tensor feats;
  switch (cfg_.variant) {
    case Variant::kFull: {
      Tensor d = difference_descriptor(pp.f_d, pc.f_d, training, tape);
      Tensor s = similarity_descriptor(pp.f_s, pc.f_s, training, tape);
      const Tensor parts[] = {d, s};
      feats = nn::concat(parts, 1, tape);
      break;
    }
    case Variant::kDifferenceOnly:
      feats = difference_descriptor(pp.f_d, pc.f_d, training, tape);
      break;
    case Variant::kSimilarityOnly:
      feats = similarity_descriptor(pp.f_s, pc.f_s, training, tape);
      break;
    case Variant::kFeatureConcat: {
      const Tensor parts[] = {pp.f_s, pc.f_s};
      feats = nn::concat(parts, 1, tape);
      break;
    }
  }
  return regression_head(feats, training, tape, dropout_rng);
}

}  // namespace gprodom::net
