#pragma once

// Shared construction helpers for the unit and acceptance tests.

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <string>

#include "yolo_former/attention.hpp"
#include "yolo_former/augment.hpp"
#include "yolo_former/evaluation.hpp"

namespace fixture {

using namespace yf;

template <typename T>
void randomize(ParamStore<T>& store, SeededRng& rng, double scale = 0.4) {
  for (auto& p : store.params()) {
    const bool gamma = p.name.ends_with(".gamma");
    for (auto& v : p.value.values()) v = static_cast<T>((gamma ? 1.0 : 0.0) + scale * rng.normal());
  }
  for (auto& b : store.buffers()) {
    const bool var = b.name.ends_with(".running_var");
    for (auto& v : b.values) v = static_cast<T>(var ? rng.uniform(0.5, 2.0) : 0.3 * rng.normal());
  }
}

template <typename T>
void fill(Param<T>& p, double v) {
  for (auto& x : p.value.values()) x = static_cast<T>(v);
}

template <typename T>
void zero_conv(Conv2d<T>& c) {
  fill(c.weight(), 0.0);
  fill(c.bias(), 0.0);
}

// Copies every parameter and buffer of `dst` from `src` under the name that
// `rename` maps it to; names that map to "" are left alone.
template <typename T>
void copy_renamed(ParamStore<T>& dst, ParamStore<T>& src, const std::function<std::string(const std::string&)>& rename) {
  for (auto& p : dst.params()) {
    const std::string from = rename(p.name);
    if (from.empty()) continue;
    auto* s = src.find_param(from);
    if (!s || s->value.shape() != p.value.shape()) throw std::logic_error("copy_renamed: no source for " + p.name);
    std::copy(s->value.values().begin(), s->value.values().end(), p.value.values().begin());
  }
  for (auto& b : dst.buffers()) {
    const std::string from = rename(b.name);
    if (from.empty()) continue;
    auto* s = src.find_buffer(from);
    if (!s || s->shape != b.shape) throw std::logic_error("copy_renamed: no source buffer for " + b.name);
    b.values = s->values;
  }
}

inline std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size()) s.replace(pos, from.size(), to);
  return s;
}

// Branch-a parts of a branched Psi map to the unbranched names; branches b
// and c have no counterpart.
inline std::string drop_branch_a(const std::string& name) {
  if (name.find(".conv1.b.") != std::string::npos || name.find(".conv1.c.") != std::string::npos ||
      name.find(".bn1.b.") != std::string::npos || name.find(".bn1.c.") != std::string::npos)
    return "";
  return replace_all(replace_all(name, ".conv1.a.", ".conv1."), ".bn1.a.", ".bn1.");
}

// Zeroes Conv1.b and Conv1.c and returns their batch norms to the freshly
// initialised state (beta 0, running mean 0), so the branches emit exact zeros.
template <typename T>
void zero_extra_branches(Csam<T>& c) {
  for (Psi<T>* psi : {&c.query(), &c.key(), &c.value()})
    for (std::size_t b = 1; b < psi->branch_count(); ++b) {
      zero_conv(psi->conv1(b));
      auto& bn = psi->bn(b);
      fill(bn.gamma(), 1.0);
      fill(bn.beta(), 0.0);
      std::fill(bn.running_mean().values.begin(), bn.running_mean().values.end(), T(0));
      std::fill(bn.running_var().values.begin(), bn.running_var().values.end(), T(1));
    }
}

template <typename T>
Tensor<T> random_input(Shape shape, SeededRng& rng, double scale = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(scale * rng.normal());
  return t;
}

inline bool bit_equal(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin(),
                                              [](float x, float y) { return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y); });
}

inline double max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a.values()[i]) - double(b.values()[i])));
  return m;
}

// Outcome of one equivalence experiment: exact for the zero-branch collapses,
// max |difference| for the block-diagonal one.
struct Collapse {
  bool mb_to_sh = false;
  bool mhmb_to_mh = false;
  double block_diagonal = 0.0;
};

inline Collapse run_collapse(std::uint64_t seed, Mode mode) {
  constexpr std::size_t C = 8;
  SeededRng rng(seed, 0xc0);
  const auto x = random_input<float>({2, C, 6, 6}, rng);
  Collapse out;
  auto make = [&](ParamStore<float>& store, CsamVariant v) {
    SeededRng init(seed, 0x1);
    return Csam<float>(store, "csam", CsamConfig{v, C}, init);
  };
  auto run = [&](Csam<float>& c) {
    Context<float> ctx;
    ctx.mode = mode;
    ctx.bn.update_running_stats = false;
    return c(ctx, x);
  };
  {
    ParamStore<float> s1, s2;
    auto sh = make(s1, CsamVariant::single_head);
    auto mb = make(s2, CsamVariant::multi_branch);
    randomize(s1, rng);
    randomize(s2, rng);
    copy_renamed(s2, s1, drop_branch_a);
    zero_extra_branches(mb);
    out.mb_to_sh = bit_equal(run(sh), run(mb));
  }
  {
    ParamStore<float> s1, s2;
    auto mh = make(s1, CsamVariant::multi_head);
    auto mhmb = make(s2, CsamVariant::multi_head_multi_branch);
    randomize(s1, rng);
    randomize(s2, rng);
    copy_renamed(s2, s1, drop_branch_a);
    zero_extra_branches(mhmb);
    out.mhmb_to_mh = bit_equal(run(mh), run(mhmb));
  }
  {
    ParamStore<float> s1, s2;
    auto sh = make(s1, CsamVariant::single_head);
    auto mh = make(s2, CsamVariant::multi_head);
    randomize(s2, rng);
    copy_renamed(s1, s2, [](const std::string& n) { return n.find(".conv2.") != std::string::npos ? "" : n; });
    // One shared kernel for every head; the single-head Conv2 embeds it block-diagonally.
    for (Psi<float>* psi : {&mh.query(), &mh.key(), &mh.value()}) {
      auto& k0 = psi->head(0);
      for (std::size_t h = 1; h < 4; ++h) {
        std::copy(k0.weight().value.values().begin(), k0.weight().value.values().end(), psi->head(h).weight().value.values().begin());
        std::copy(k0.bias().value.values().begin(), k0.bias().value.values().end(), psi->head(h).bias().value.values().begin());
      }
    }
    Psi<float>* sh_psi[] = {&sh.query(), &sh.key(), &sh.value()};
    Psi<float>* mh_psi[] = {&mh.query(), &mh.key(), &mh.value()};
    for (int g = 0; g < 3; ++g) {
      auto& big = sh_psi[g]->conv2();
      auto& k = mh_psi[g]->head(0);
      fill(big.weight(), 0.0);
      const std::size_t hc = C / 4;
      auto W = big.weight().value.values();
      auto K = k.weight().value.values();
      for (std::size_t h = 0; h < 4; ++h)
        for (std::size_t o = 0; o < hc; ++o) {
          for (std::size_t i = 0; i < hc; ++i)
            for (std::size_t t = 0; t < 9; ++t) W[((h * hc + o) * C + h * hc + i) * 9 + t] = K[(o * hc + i) * 9 + t];
          big.bias().value.values()[h * hc + o] = k.bias().value.values()[o];
        }
    }
    out.block_diagonal = max_abs_diff(run(sh), run(mh));
  }
  return out;
}

// Bypass: Conv4 zeroed, eval mode; true when every output is bit-identical to its input.
inline bool run_bypass(CsamVariant v, std::uint64_t seed, std::size_t trials) {
  constexpr std::size_t C = 8;
  ParamStore<float> store;
  SeededRng init(seed, 0x2);
  Csam<float> csam(store, "csam", CsamConfig{v, C, 4, has_branches(v)}, init);
  randomize(store, init);
  zero_conv(csam.conv4());
  SeededRng rng(seed, 0x3);
  for (std::size_t t = 0; t < trials; ++t) {
    const auto x = random_input<float>({1 + rng.below(2), C, 3 + rng.below(6), 3 + rng.below(6)}, rng, 3.0);
    Context<float> ctx;
    ctx.mode = Mode::eval;
    if (!bit_equal(csam(ctx, x), x)) return false;
  }
  return true;
}

// Random raster with `boxes` random valid boxes.
inline Sample random_sample(SeededRng& rng, std::size_t w, std::size_t h, std::size_t boxes) {
  Sample s;
  s.image = Image(w, h);
  for (auto& v : s.image.pixels) v = static_cast<std::uint8_t>(rng.below(256));
  for (std::size_t i = 0; i < boxes; ++i) {
    const double bw = rng.uniform(2.0, static_cast<double>(w)), bh = rng.uniform(2.0, static_cast<double>(h));
    const double x0 = rng.uniform(0.0, static_cast<double>(w) - bw), y0 = rng.uniform(0.0, static_cast<double>(h) - bh);
    s.boxes.push_back({Box{x0, y0, x0 + bw, y0 + bh}, static_cast<int>(rng.below(3))});
  }
  return s;
}

// Box corners rounded to 1/1024 px. Reflections of such coordinates are exact
// in double precision; arbitrary doubles come back within an ulp.
inline Sample snap_boxes(Sample s) {
  for (auto& b : s.boxes)
    for (double* v : {&b.box.xmin, &b.box.ymin, &b.box.xmax, &b.box.ymax}) *v = std::round(*v * 1024.0) / 1024.0;
  return s;
}

inline bool boxes_valid(const Sample& s) {
  for (const auto& b : s.boxes)
    if (!box_in_bounds(b.box, static_cast<double>(s.image.width), static_cast<double>(s.image.height))) return false;
  return true;
}

// Random detection problem for the AP oracle: jittered copies of ground
// truth plus clutter, every score distinct.
struct ApInstance {
  std::vector<std::vector<Detection>> detections;
  std::vector<std::vector<LabeledBox>> ground_truth;
};

inline ApInstance random_ap_instance(SeededRng& rng, std::size_t images, std::size_t classes) {
  ApInstance out;
  out.detections.resize(images);
  out.ground_truth.resize(images);
  std::vector<double> scores;
  auto box = [&] {
    const double x = rng.uniform(0, 80), y = rng.uniform(0, 80);
    return Box{x, y, x + rng.uniform(4, 30), y + rng.uniform(4, 30)};
  };
  for (std::size_t i = 0; i < images; ++i) {
    const std::size_t n = rng.below(4);
    for (std::size_t g = 0; g < n; ++g) {
      const int cls = static_cast<int>(rng.below(classes));
      const Box b = box();
      out.ground_truth[i].push_back({b, cls});
      for (std::size_t k = rng.below(3); k-- > 0;) {
        const double j = rng.uniform(0, 4);
        out.detections[i].push_back({Box{b.xmin + j, b.ymin - j, b.xmax + j, b.ymax}, cls, 0});
      }
    }
    for (std::size_t k = rng.below(3); k-- > 0;)
      out.detections[i].push_back({box(), static_cast<int>(rng.below(classes)), 0});
  }
  // Distinct scores: a shuffled ladder.
  std::size_t total = 0;
  for (const auto& d : out.detections) total += d.size();
  std::vector<std::size_t> order(total);
  for (std::size_t k = 0; k < total; ++k) order[k] = k;
  rng.shuffle(order.begin(), order.end());
  std::size_t k = 0;
  for (auto& d : out.detections)
    for (auto& det : d) det.score = (static_cast<double>(order[k++]) + 0.5) / static_cast<double>(total);
  return out;
}

}  // namespace fixture
