#pragma once

// Convolutional self-attention (CSAM) and the convolutional transformer
// module that replaces the residual blocks of the backbone.
//
// CSAM:   Q = psi_q(x), K = psi_k(x), V = mish(BN(psi_v(x)))
//         A = sigmoid(Q * K)                      (element-wise, unscaled)
//         out = x + mish(Conv4_3x3(mish(Conv3_1x1(V * A))))
//
// psi, per variant:
//   single_head              conv1 1x1 -> BN -> mish -> conv2 3x3
//   multi_branch             a: conv1.a -> BN -> mish -> conv2 3x3
//                            b, c: conv1.{b,c} 1x1 -> BN -> mish
//                            out = a + s_b*b + s_c*c  (s = 1, or shake-shake)
//   multi_head               conv1 -> BN -> mish -> split into 4 heads ->
//                            independent 3x3 conv per head -> concat
//   multi_head_multi_branch  multi_branch with branch a's 3x3 as 4 heads
//
// Transformer module:
//   p = Conv1_1x1(x); r1 = CSAM(BN1(p)) + p
//   out = r1 + mish(Conv3_1x1(mish(Conv2_1x1(BN2(r1)))))

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "yolo_former/layers.hpp"

namespace yf {

enum class CsamVariant { single_head, multi_branch, multi_head, multi_head_multi_branch };

std::string_view to_string(CsamVariant v);
/// Accepts "sh", "mb", "mh", "mhmb" and the full enumerator names.
CsamVariant parse_variant(std::string_view text);
bool has_branches(CsamVariant v);
bool has_heads(CsamVariant v);

struct CsamConfig {
  CsamVariant variant = CsamVariant::single_head;
  std::size_t channels = 0;
  std::size_t heads = 4;
  bool shake_shake = false;

  void validate() const;
};

struct TransformerConfig {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  CsamConfig csam;

  void validate() const;
};

enum class ShakePhase { train_forward, train_backward, eval };

/// eval -> (0.5, 0.5); train_forward -> two independent U(0,1);
/// train_backward -> two independent Beta(1,1).
std::array<double, 2> sample_shake_pair(SeededRng& rng, ShakePhase phase);

/// Forward and backward pairs for one training step (drawn independently),
/// or the fixed 0.5 pairs in eval mode.
ShakeCoefficients sample_shake_coefficients(SeededRng& rng, Mode mode);

/// One of the Q/K/V gates.
template <typename T>
class Psi {
 public:
  Psi() = default;
  Psi(ParamStore<T>& store, const std::string& prefix, const CsamConfig& config, SeededRng& init);

  Tensor<T> operator()(Context<T>& ctx, const Tensor<T>& x) const;

  const CsamConfig& config() const { return config_; }

  // Exposed for structural tests (zeroing branches, sharing kernels).
  Conv2d<T>& conv1(std::size_t branch = 0) { return conv1_.at(branch); }
  BatchNorm2d<T>& bn(std::size_t branch = 0) { return bn_.at(branch); }
  Conv2d<T>& conv2() { return conv2_; }
  Conv2d<T>& head(std::size_t i) { return heads_.at(i); }
  std::size_t branch_count() const { return conv1_.size(); }

 private:
  Tensor<T> spatial(Context<T>& ctx, const Tensor<T>& x) const;

  CsamConfig config_;
  std::vector<Conv2d<T>> conv1_;
  std::vector<BatchNorm2d<T>> bn_;
  Conv2d<T> conv2_;
  std::vector<Conv2d<T>> heads_;
};

/// Intermediate values of one CSAM forward pass, for inspection.
template <typename T>
struct CsamTrace {
  Tensor<T> attention;  // sigmoid(Q * K)
  Tensor<T> value;      // V
  Tensor<T> gated;      // V * A, the input of Conv3
};

template <typename T>
class Csam {
 public:
  Csam() = default;
  Csam(ParamStore<T>& store, const std::string& prefix, const CsamConfig& config, SeededRng& init);

  Tensor<T> operator()(Context<T>& ctx, const Tensor<T>& x, CsamTrace<T>* trace = nullptr) const;

  const CsamConfig& config() const { return config_; }
  Psi<T>& query() { return q_; }
  Psi<T>& key() { return k_; }
  Psi<T>& value() { return v_; }
  BatchNorm2d<T>& value_bn() { return v_bn_; }
  Conv2d<T>& conv3() { return conv3_; }
  Conv2d<T>& conv4() { return conv4_; }

 private:
  CsamConfig config_;
  Psi<T> q_, k_, v_;
  BatchNorm2d<T> v_bn_;
  Conv2d<T> conv3_, conv4_;
};

template <typename T>
class TransformerModule {
 public:
  TransformerModule() = default;
  TransformerModule(ParamStore<T>& store, const std::string& prefix, const TransformerConfig& config,
                    SeededRng& init);

  Tensor<T> operator()(Context<T>& ctx, const Tensor<T>& x) const;

  const TransformerConfig& config() const { return config_; }
  Conv2d<T>& conv1() { return conv1_; }
  BatchNorm2d<T>& bn1() { return bn1_; }
  Csam<T>& csam() { return csam_; }
  BatchNorm2d<T>& bn2() { return bn2_; }
  Conv2d<T>& conv2() { return conv2_; }
  Conv2d<T>& conv3() { return conv3_; }

 private:
  TransformerConfig config_;
  Conv2d<T> conv1_;
  BatchNorm2d<T> bn1_;
  Csam<T> csam_;
  BatchNorm2d<T> bn2_;
  Conv2d<T> conv2_, conv3_;
};

extern template class Psi<float>;
extern template class Psi<double>;
extern template class Csam<float>;
extern template class Csam<double>;
extern template class TransformerModule<float>;
extern template class TransformerModule<double>;

}  // namespace yf
