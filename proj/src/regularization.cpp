#include "yolo_former/regularization.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace yf {

double dropblock_seed_rate(double keep_prob, std::size_t block, std::size_t height, std::size_t width) {
  if (block == 0 || block > height || block > width)
    throw std::invalid_argument("dropblock: block size " + std::to_string(block) + " does not fit a " +
                                std::to_string(height) + "x" + std::to_string(width) + " map");
  const double valid = static_cast<double>((height - block + 1) * (width - block + 1));
  return (1.0 - keep_prob) / static_cast<double>(block * block) * static_cast<double>(height * width) / valid;
}

double scheduled_keep_prob(std::size_t epoch, std::size_t epochs, double start, double end) {
  if (epochs <= 1) return end;
  const double t = std::min(1.0, static_cast<double>(epoch) / static_cast<double>(epochs - 1));
  return (1.0 - t) * start + t * end;
}

template <typename T>
Tensor<T> dropblock(Tape<T>* tape, const Tensor<T>& x, double keep_prob, std::size_t block, Mode mode,
                    SeededRng& rng) {
  if (mode == Mode::eval || keep_prob >= 1.0) return x;
  if (x.rank() != 4) throw ShapeError("dropblock: expected NCHW input");
  const std::size_t planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const double gamma = dropblock_seed_rate(keep_prob, block, H, W);
  std::vector<T> mask(x.numel(), T(1));
  for (std::size_t p = 0; p < planes; ++p) {
    T* m = mask.data() + p * H * W;
    for (std::size_t i = 0; i + block <= H; ++i)
      for (std::size_t j = 0; j + block <= W; ++j) {
        if (!rng.bernoulli(gamma)) continue;
        for (std::size_t di = 0; di < block; ++di)
          std::fill_n(m + (i + di) * W + j, block, T(0));
      }
  }
  const auto kept = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), T(1)));
  if (kept > 0) {
    const T factor = static_cast<T>(static_cast<double>(mask.size()) / static_cast<double>(kept));
    for (auto& v : mask) v *= factor;
  }
  return ops::mul_constant(tape, x, std::move(mask));
}

template Tensor<float> dropblock<float>(Tape<float>*, const Tensor<float>&, double, std::size_t, Mode, SeededRng&);
template Tensor<double> dropblock<double>(Tape<double>*, const Tensor<double>&, double, std::size_t, Mode,
                                         SeededRng&);

}  // namespace yf
