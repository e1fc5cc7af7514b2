#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vitst/augment.hpp"
#include "vitst/raster.hpp"
#include "vitst/tensor.hpp"

namespace vitst {

struct ModelConfig {
  size_t patch_size = 4;
  size_t window = 7;
  std::vector<size_t> depths = {2, 2};
  size_t embed_dim = 32;
  std::vector<size_t> heads = {2, 4};
  size_t mlp_ratio = 4;
  size_t num_classes = 2;
  size_t static_dim = 0;  // 0 = no static-feature branch
  bool gelu_exact = false;

  void validate() const;
  size_t stages() const { return depths.size(); }
  size_t stage_dim(size_t s) const { return embed_dim << s; }
  // Side length, in pixels, of the receptive patch of one final-stage token.
  size_t final_patch() const { return patch_size << (depths.size() - 1); }

  // Flat "model.key=value" lines, the checkpoint text section.
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
};

// Copies of post-softmax attention weights captured during a forward pass.
struct AttnRecord {
  size_t stage = 0, block = 0;
  size_t heads = 0, win_len = 0;      // L = w_eff^2
  size_t grid_h = 0, grid_w = 0;      // padded token grid
  size_t real_h = 0, real_w = 0;      // unpadded token grid
  size_t window = 0, shift = 0;
  std::vector<float> weights;         // (B*nW*heads, L, L)
};

struct AttnProbe {
  std::vector<AttnRecord> records;
};

template <typename T>
class SwinModelT {
public:
  SwinModelT(ModelConfig cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  // images: (B, H, W, 3) floats in [0,1]; H, W divisible by patch_size.
  // sentences: one static-feature sentence per sample when static_dim > 0.
  TensorT<T> forward_classify(const TensorT<T>& images,
                              const std::vector<std::string>& sentences = {},
                              AttnProbe* probe = nullptr);

  struct MimOutput {
    TensorT<T> loss;
    TensorT<T> reconstruction;  // (B, H, W, 3)
    size_t masked_elements = 0;
  };
  // One mask per sample; masked patches are replaced by a learned token at
  // the patch-embedding stage and the l1 loss covers masked pixels only.
  MimOutput forward_mim(const TensorT<T>& images, const std::vector<MimMask>& masks);

  // Hash-bag sentence encoder: per-token bucket embeddings, mean-pooled.
  TensorT<T> encode_static(const std::string& sentence);
  static std::vector<size_t> static_token_buckets(const std::string& sentence, size_t buckets);

  // Average received attention of the final stage mapped to pixel space and
  // min-max normalized to [0,1]; image must be a single sample (B=1).
  std::vector<double> attention_summary(const TensorT<T>& image, size_t* out_h = nullptr,
                                        size_t* out_w = nullptr);

  std::vector<std::pair<std::string, TensorT<T>>>& named_params() { return params_; }
  std::vector<TensorT<T>> trainable();
  TensorT<T>& param(const std::string& name);
  void set_requires_grad(bool rg);

  void save(const std::string& path, const std::string& config_text) const;
  // Full load: every model tensor must be present with a matching shape.
  void load(const std::string& path);
  // Encoder-only warm start: copies tensors with matching name+shape,
  // skipping the classification head; returns the names copied.
  std::vector<std::string> warm_start(const std::string& path);

private:
  TensorT<T> encode_tokens(TensorT<T> tokens, size_t grid_h, size_t grid_w, AttnProbe* probe,
                           size_t* final_h, size_t* final_w);
  TensorT<T> block_forward(TensorT<T> x, size_t stage, size_t block, bool shifted,
                           AttnProbe* probe);
  TensorT<T> patch_merge(TensorT<T> x, size_t stage);
  TensorT<T> rel_bias_for(size_t stage, size_t block, size_t w_eff);

  ModelConfig cfg_;
  std::vector<std::pair<std::string, TensorT<T>>> params_;
  std::map<std::string, size_t> index_;

  TensorT<T>& add_param(const std::string& name, Shape shape, Rng& rng, double std_dev);
};

using SwinModel = SwinModelT<float>;
using SwinModel64 = SwinModelT<double>;

// ---- window geometry helpers (shared with tests) ---------------------------

// (B,H,W,C) -> (B*nW, w*w, C), row-major windows.
template <typename T>
TensorT<T> window_partition(const TensorT<T>& fm, size_t window);
template <typename T>
TensorT<T> window_reverse(const TensorT<T>& windows, size_t window, size_t batch, size_t grid_h,
                          size_t grid_w);

// Additive attention mask (nW, L, L) with 0 for allowed pairs and -1e9 where
// the key is a padded token or (shift > 0) the pair crosses a shifted-window
// region boundary. Geometry is the rolled, padded token canvas.
template <typename T>
TensorT<T> build_window_mask(size_t real_h, size_t real_w, size_t pad_h, size_t pad_w,
                             size_t window, size_t shift);

// Relative-position index of a w x w window into a (2*max_window-1)^2 table.
std::vector<size_t> relative_position_index(size_t window, size_t max_window);

// Token-level window attention used by the swin blocks; exposed so tests can
// compare it against a dense oracle. tokens: (G, L, C).
template <typename T>
TensorT<T> window_attention(const TensorT<T>& tokens, const TensorT<T>& qkv_w,
                            const TensorT<T>& qkv_b, const TensorT<T>& proj_w,
                            const TensorT<T>& proj_b, const TensorT<T>& rel_bias,
                            const TensorT<T>& mask, size_t num_heads,
                            std::vector<float>* attn_out = nullptr);

}  // namespace vitst
