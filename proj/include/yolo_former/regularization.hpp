#pragma once

#include <cstddef>

#include "yolo_former/ops.hpp"
#include "yolo_former/rng.hpp"

namespace yf {

/// Seed rate that makes the expected dropped fraction (1 - keep_prob):
/// (1 - keep) / block^2 * (H*W) / ((H - block + 1) * (W - block + 1)).
double dropblock_seed_rate(double keep_prob, std::size_t block, std::size_t height, std::size_t width);

/// Linear keep-probability schedule; exactly `start` at epoch 0 and `end` at
/// the last epoch (epochs - 1).
double scheduled_keep_prob(std::size_t epoch, std::size_t epochs, double start, double end);

/// DropBlock on NCHW input. Identity in eval mode or when keep_prob >= 1.
/// In train mode, seeds are drawn per (n, c) map over positions where a full
/// block fits, each seed zeroes the block x block square it anchors, and the
/// survivors are rescaled by total/kept over the whole tensor.
template <typename T>
Tensor<T> dropblock(Tape<T>* tape, const Tensor<T>& x, double keep_prob, std::size_t block, Mode mode,
                    SeededRng& rng);

}  // namespace yf
