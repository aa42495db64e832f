#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gprodom/ops.hpp"
#include "gprodom/optim.hpp"
#include "gprodom/params.hpp"
#include "gprodom/preprocess.hpp"
#include "gprodom/tensor.hpp"

namespace gprodom::net {

enum class Variant { kFull, kDifferenceOnly, kSimilarityOnly, kFeatureConcat };

// stable config ids: "full", "difference_only", "similarity_only", "feature_concat"
std::string variant_id(Variant v);
Variant variant_from_id(const std::string& id);
// report row labels: "GPR-OdomNet", "Difference Only", "Similarity Only",
// "Feature Concatenation"
std::string variant_label(Variant v);

struct NetConfig {
  int input_h = 64;
  int input_w = 64;
  std::array<int, 4> widths = {8, 16, 32, 64};   // stage channels c1..c4
  std::array<int, 4> blocks = {2, 2, 2, 2};      // residual blocks per stage
  int diff_channels = 32;                        // compressed difference width
  int sim_channels = 8;                          // similarity CBR output width
  std::array<int, 2> head_hidden = {64, 32};
  double dropout = 0.2;
  int attention_reduction = 4;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  Variant variant = Variant::kFull;

  void validate() const;  // throws listing every violated constraint
  std::string to_json() const;
  static NetConfig from_json(const std::string& text);  // rejects unknown keys
};

/// Multi-scale features of one B-scan: f1..f4 at 1/4..1/32 resolution,
/// f_d the compressed difference feature map (at f3 resolution), f_s the
/// flattened deep feature. f_d is only populated when the variant owns the
/// compression path.
struct FeaturePyramid {
  nn::Tensor f1, f2, f3, f4;
  nn::Tensor f_d;  // N x diff_channels x H/16 x W/16
  nn::Tensor f_s;  // N x (c4 * H/32 * W/32)
};

/// Labeled pair of consecutive B-scans; label is the traveled Euclidean
/// distance in meters.
struct OdomPair {
  pre::BScan prev;
  pre::BScan cur;
  double label = 0.0;
  std::string trajectory;
};

// Stacks B-scans into an N x 1 x H x W input tensor.
nn::Tensor bscans_to_tensor(const std::vector<const pre::BScan*>& scans);

class OdomNet {
 public:
  OdomNet(const NetConfig& cfg, std::uint64_t init_seed);

  const NetConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }

  FeaturePyramid extract_features(const nn::Tensor& input, bool training, nn::Tape* tape);

  nn::Tensor difference_descriptor(const nn::Tensor& fd_prev, const nn::Tensor& fd_cur,
                                   bool training, nn::Tape* tape);
  nn::Tensor similarity_descriptor(const nn::Tensor& fs_prev, const nn::Tensor& fs_cur,
                                   bool training, nn::Tape* tape);
  nn::Tensor regression_head(const nn::Tensor& features, bool training, nn::Tape* tape,
                             std::mt19937_64* dropout_rng);

  // Full composition: shared-weight feature extraction on both B-scans,
  // branch descriptors per variant, regression. Returns one scalar per pair.
  nn::Tensor forward_pair(const nn::Tensor& prev, const nn::Tensor& cur, bool training,
                          nn::Tape* tape, std::mt19937_64* dropout_rng);

  // Intermediate products of the difference branch, for invariant checks.
  struct DiffTrace {
    nn::Tensor delta;       // |fd_cur - fd_prev|
    nn::Tensor conv;        // after the two CBR blocks
    nn::Tensor channel_w;   // channel attention weights, N x C x 1 x 1
    nn::Tensor spatial_w;   // spatial attention map, N x 1 x H x W
    nn::Tensor weighted;    // conv * CA * SA
    nn::Tensor descriptor;  // pooled vector, N x C
  };
  DiffTrace difference_branch_trace(const nn::Tensor& fd_prev, const nn::Tensor& fd_cur,
                                    bool training, nn::Tape* tape);

  int head_input_width() const;

 private:
  struct ConvLayer {
    nn::Tensor w, b;
    nn::Conv2dSpec spec;
  };
  struct BnLayer {
    nn::Tensor gamma, beta, mean, var;
  };
  struct CbrLayer {
    ConvLayer conv;
    BnLayer bn;
  };
  struct ResBlock {
    BnLayer bn1;
    ConvLayer conv1;
    BnLayer bn2;
    ConvLayer conv2;
    std::optional<ConvLayer> proj;
  };
  struct LbrdLayer {
    nn::Tensor w, b;
    BnLayer bn;
  };

  nn::Tensor apply_conv(const ConvLayer& l, const nn::Tensor& x, nn::Tape* tape);
  nn::Tensor apply_bn(BnLayer& l, const nn::Tensor& x, bool training, nn::Tape* tape);
  nn::Tensor apply_cbr(CbrLayer& l, const nn::Tensor& x, bool training, nn::Tape* tape);
  nn::Tensor apply_block(ResBlock& blk, const nn::Tensor& x, bool training, nn::Tape* tape);

  ConvLayer make_conv(const std::string& name, int c_out, int c_in, int k, int stride, int pad,
                      bool bias, std::mt19937_64& rng);
  BnLayer make_bn(const std::string& name, int channels);
  CbrLayer make_cbr(const std::string& name, int c_out, int c_in, int k, int stride, int pad,
                    std::mt19937_64& rng);
  LbrdLayer make_lbrd(const std::string& name, int out_w, int in_w, std::mt19937_64& rng);

  NetConfig cfg_;
  nn::ParamStore store_;
  ConvLayer stem_;
  std::array<std::vector<ResBlock>, 4> stages_;
  // compression of f1..f3 into the difference feature map
  ConvLayer comp1_, comp2_, comp3_;
  CbrLayer comp_cbr_;
  // difference branch
  CbrLayer diff_cbr1_, diff_cbr2_;
  ConvLayer ca_conv1_, ca_conv2_, sa_conv_;
  // similarity branch
  CbrLayer sim_cbr_;
  // regression head
  LbrdLayer head1_, head2_;
  nn::Tensor head_out_w_, head_out_b_;
  bool has_diff_ = false;
  bool has_sim_ = false;
};

}  // namespace gprodom::net
