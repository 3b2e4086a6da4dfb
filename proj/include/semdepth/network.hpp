#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "semdepth/error.hpp"
#include "semdepth/ops.hpp"
#include "semdepth/rng.hpp"
#include "semdepth/tensor.hpp"

// Shared-encoder / dual-decoder model: a contractive encoder feeds a depth
// decoder (sigmoid-scaled left+right disparity at 4 scales) and a separately
// parameterized semantic decoder (full-resolution class logits), with skip
// connections at matching resolutions.

namespace semdepth {

struct ModelConfig {
  std::vector<int> encoder_channels{16, 32, 64, 128, 256};
  int num_classes = 2;
  double d_max_fraction = 0.3;  // disparity cap as a fraction of map width

  int num_levels() const { return static_cast<int>(encoder_channels.size()); }
  // Disparity heads exist at scales 0..num_scales-1; shallow configs (used by
  // the gradient suite) clip the pyramid to what the decoder can produce.
  int num_scales() const { return std::min(4, num_levels()); }

  void validate() const {
    if (encoder_channels.empty()) {
      throw DataError("model config: encoder needs at least one level");
    }
    for (int c : encoder_channels) {
      if (c <= 0) throw DataError("model config: non-positive channel count");
    }
    if (num_classes < 2) {
      throw DataError("model config: need at least 2 classes");
    }
    if (d_max_fraction <= 0.0 || d_max_fraction >= 1.0) {
      throw DataError("model config: d_max_fraction outside (0, 1)");
    }
  }

  bool operator==(const ModelConfig& o) const {
    return encoder_channels == o.encoder_channels &&
           num_classes == o.num_classes &&
           d_max_fraction == o.d_max_fraction;
  }
};

// Flat, ordered parameter store. The order is the canonical one used by the
// optimizer and the checkpoint format; names are prefixed enc/dep/sem so the
// two decoders can be told apart structurally.
template <class T>
struct ModelParams {
  ModelConfig cfg;
  std::vector<std::pair<std::string, Tensor<T>>> params;

  Tensor<T>& at(const std::string& name) {
    for (auto& [n, t] : params)
      if (n == name) return t;
    throw DataError("model params: unknown parameter '" + name + "'");
  }
  const Tensor<T>& at(const std::string& name) const {
    return const_cast<ModelParams*>(this)->at(name);
  }
};

namespace detail {

template <class T>
Tensor<T> init_conv_weight(int out_ch, int in_ch, int k, SplitMix64& rng) {
  Tensor<T> w(Shape{out_ch, in_ch, k, k});
  const double bound = std::sqrt(6.0 / (static_cast<double>(in_ch) * k * k));
  for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return w;
}

// Decoders run at half the encoder's width (floor 8): the expanding path
// refines rather than extracts, and the slimmer profile roughly halves the
// model's FLOPs without touching the topology.
inline int decoder_channels(const ModelConfig& cfg, int level) {
  return std::max(cfg.encoder_channels[level] / 2, 8);
}

// in_ch of the decoder's post-upsample conv at `level`, and of the conv that
// runs after the skip concat.
inline int decoder_up_in(const ModelConfig& cfg, int level) {
  const int top = cfg.num_levels() - 1;
  return level == top ? cfg.encoder_channels[top]
                      : decoder_channels(cfg, level + 1);
}
inline int decoder_join_in(const ModelConfig& cfg, int level) {
  return decoder_channels(cfg, level) +
         (level >= 1 ? cfg.encoder_channels[level - 1] : 0);
}

}  // namespace detail

// Deterministic fan-in-uniform initialization: weights ~ U(±sqrt(6/fan_in))
// drawn in canonical parameter order from one splitmix stream, biases zero.
template <class T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams<T> mp;
  mp.cfg = cfg;
  SplitMix64 rng(seed);
  const int L = cfg.num_levels();

  auto push_conv = [&](const std::string& name, int out_ch, int in_ch) {
    mp.params.emplace_back(name + "_w",
                           detail::init_conv_weight<T>(out_ch, in_ch, 3, rng));
    mp.params.emplace_back(name + "_b", Tensor<T>(Shape{1, out_ch, 1, 1}));
  };

  int in_ch = 3;
  for (int i = 0; i < L; ++i) {
    const int out_ch = cfg.encoder_channels[i];
    push_conv("enc" + std::to_string(i) + "_a", out_ch, in_ch);
    push_conv("enc" + std::to_string(i) + "_b", out_ch, out_ch);
    in_ch = out_ch;
  }
  auto push_decoder = [&](const std::string& prefix) {
    for (int i = L - 1; i >= 0; --i) {
      const int ch = detail::decoder_channels(cfg, i);
      push_conv(prefix + std::to_string(i) + "_up", ch,
                detail::decoder_up_in(cfg, i));
      push_conv(prefix + std::to_string(i) + "_join", ch,
                detail::decoder_join_in(cfg, i));
    }
  };
  push_decoder("dep");
  for (int s = 0; s < cfg.num_scales(); ++s) {
    push_conv("dep_head" + std::to_string(s), 2,
              detail::decoder_channels(cfg, s));
  }
  push_decoder("sem");
  push_conv("sem_head", cfg.num_classes, detail::decoder_channels(cfg, 0));
  return mp;
}

template <class T>
std::int64_t count_trainable(const ModelParams<T>& mp,
                             const std::string& prefix = "") {
  std::int64_t total = 0;
  for (const auto& [name, t] : mp.params) {
    if (name.rfind(prefix, 0) == 0) total += t.numel();
  }
  return total;
}

// Parameters registered as (typically trainable) leaves on one graph.
template <class T>
struct BoundParams {
  std::vector<std::pair<std::string, Tensor<T>>> leaves;

  const Tensor<T>& at(const std::string& name) const {
    for (auto& [n, t] : leaves)
      if (n == name) return t;
    throw DataError("bound params: unknown parameter '" + name + "'");
  }
};

template <class T>
BoundParams<T> bind_params(Graph<T>& g, const ModelParams<T>& mp,
                           bool trainable = true) {
  BoundParams<T> bp;
  bp.leaves.reserve(mp.params.size());
  for (const auto& [name, t] : mp.params) {
    bp.leaves.emplace_back(name, g.leaf(t, trainable));
  }
  return bp;
}

template <class T>
struct ForwardResult {
  std::vector<Tensor<T>> d_l, d_r;  // (n,1,H/2^s,W/2^s) for s = 0..S-1
  Tensor<T> sem_logits;             // (n,C,H,W); only if with_semantics
  bool has_sem = false;
};

// Runs the model on a graph-bound input in [0,1]. The encoder runs once and
// feeds both decoders; with_semantics=false skips the semantic decoder
// entirely for configurations whose loss would never touch it.
template <class T>
ForwardResult<T> forward(Graph<T>& g, const BoundParams<T>& bp,
                         const ModelConfig& cfg, const Tensor<T>& input,
                         bool with_semantics) {
  cfg.validate();
  if (input.graph() != &g) {
    throw ShapeError("forward: input not bound to the given graph");
  }
  const Shape in = input.shape();
  const int L = cfg.num_levels();
  if (in.c != 3) {
    throw ShapeError("forward: expected 3-channel input, got " + in.str());
  }
  if (in.h % (1 << L) != 0 || in.w % (1 << L) != 0 || in.h < (1 << L) ||
      in.w < (1 << L)) {
    throw ShapeError("forward: dims " + in.str() + " not divisible by 2^" +
                     std::to_string(L));
  }

  auto conv = [&](const Tensor<T>& x, const std::string& name, int stride) {
    return conv2d(x, bp.at(name + "_w"), bp.at(name + "_b"), stride);
  };

  std::vector<Tensor<T>> enc;
  enc.reserve(L);
  Tensor<T> x = input;
  for (int i = 0; i < L; ++i) {
    const std::string n = "enc" + std::to_string(i);
    x = elu(conv(x, n + "_a", 2));
    x = elu(conv(x, n + "_b", 1));
    enc.push_back(x);
  }

  auto run_decoder = [&](const std::string& prefix) {
    std::vector<Tensor<T>> feats(L);
    Tensor<T> f = enc[L - 1];
    for (int i = L - 1; i >= 0; --i) {
      const std::string n = prefix + std::to_string(i);
      Tensor<T> c1 = elu(conv(upsample2x_nearest(f), n + "_up", 1));
      Tensor<T> cat = i >= 1 ? concat_channels(c1, enc[i - 1]) : c1;
      f = elu(conv(cat, n + "_join", 1));
      feats[i] = f;
    }
    return feats;
  };

  ForwardResult<T> out;
  std::vector<Tensor<T>> dep = run_decoder("dep");
  for (int s = 0; s < cfg.num_scales(); ++s) {
    Tensor<T> head = conv(dep[s], "dep_head" + std::to_string(s), 1);
    const T d_max = static_cast<T>(cfg.d_max_fraction * (in.w >> s));
    Tensor<T> disp = mul_scalar(sigmoid(head), d_max);
    out.d_l.push_back(slice_channels(disp, 0, 1));
    out.d_r.push_back(slice_channels(disp, 1, 2));
  }
  if (with_semantics) {
    std::vector<Tensor<T>> sem = run_decoder("sem");
    out.sem_logits = conv(sem[0], "sem_head", 1);
    out.has_sem = true;
  }
  return out;
}

}  // namespace semdepth
