#include "vitst/swin.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

namespace vitst {

void ModelConfig::validate() const {
  if (depths.empty() || heads.size() != depths.size())
    fail("model config: depths and heads must be non-empty and the same length");
  for (size_t d : depths)
    if (d < 1) fail("model config: every stage needs at least one block");
  if (window < 2) fail("model config: window must be >= 2");
  if (patch_size < 1) fail("model config: patch_size must be >= 1");
  if (mlp_ratio < 1) fail("model config: mlp_ratio must be >= 1");
  if (num_classes < 1) fail("model config: num_classes must be >= 1");
  for (size_t s = 0; s < depths.size(); ++s) {
    if (heads[s] < 1 || stage_dim(s) % heads[s] != 0)
      fail("model config: stage " + std::to_string(s) + " dim " + std::to_string(stage_dim(s)) +
           " not divisible by heads " + std::to_string(heads[s]));
  }
}

namespace {

std::string join_sizes(const std::vector<size_t>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<size_t> parse_sizes(const std::string& s) {
  std::vector<size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(static_cast<size_t>(std::stoull(item)));
  }
  return out;
}

}  // namespace

std::string ModelConfig::to_text() const {
  std::ostringstream out;
  out << "model.patch_size=" << patch_size << "\n";
  out << "model.window=" << window << "\n";
  out << "model.depths=" << join_sizes(depths) << "\n";
  out << "model.embed_dim=" << embed_dim << "\n";
  out << "model.heads=" << join_sizes(heads) << "\n";
  out << "model.mlp_ratio=" << mlp_ratio << "\n";
  out << "model.num_classes=" << num_classes << "\n";
  out << "model.static_dim=" << static_dim << "\n";
  out << "model.gelu_exact=" << (gelu_exact ? 1 : 0) << "\n";
  return out.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig cfg;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    if (key == "model.patch_size") cfg.patch_size = std::stoull(value);
    else if (key == "model.window") cfg.window = std::stoull(value);
    else if (key == "model.depths") cfg.depths = parse_sizes(value);
    else if (key == "model.embed_dim") cfg.embed_dim = std::stoull(value);
    else if (key == "model.heads") cfg.heads = parse_sizes(value);
    else if (key == "model.mlp_ratio") cfg.mlp_ratio = std::stoull(value);
    else if (key == "model.num_classes") cfg.num_classes = std::stoull(value);
    else if (key == "model.static_dim") cfg.static_dim = std::stoull(value);
    else if (key == "model.gelu_exact") cfg.gelu_exact = value == "1" || value == "true";
  }
  cfg.validate();
  return cfg;
}

// ---- geometry helpers -------------------------------------------------------

template <typename T>
TensorT<T> window_partition(const TensorT<T>& fm, size_t window) {
  if (fm.rank() != 4) fail("window_partition: expected (B,H,W,C)");
  const size_t b = fm.dim(0), h = fm.dim(1), w = fm.dim(2), c = fm.dim(3);
  if (h % window != 0 || w % window != 0)
    fail("window_partition: grid " + std::to_string(h) + "x" + std::to_string(w) +
         " not divisible by window " + std::to_string(window));
  TensorT<T> x = reshape(fm, {b, h / window, window, w / window, window, c});
  x = permute(x, {0, 1, 3, 2, 4, 5});
  return reshape(x, {b * (h / window) * (w / window), window * window, c});
}

template <typename T>
TensorT<T> window_reverse(const TensorT<T>& windows, size_t window, size_t batch, size_t grid_h,
                          size_t grid_w) {
  const size_t c = windows.dim(2);
  TensorT<T> x =
      reshape(windows, {batch, grid_h / window, grid_w / window, window, window, c});
  x = permute(x, {0, 1, 3, 2, 4, 5});
  return reshape(x, {batch, grid_h, grid_w, c});
}

template <typename T>
TensorT<T> build_window_mask(size_t real_h, size_t real_w, size_t pad_h, size_t pad_w,
                             size_t window, size_t shift) {
  const size_t nwh = pad_h / window, nww = pad_w / window;
  const size_t len = window * window;

  // Region id of each rolled-canvas cell; -1 marks padded tokens.
  auto region = [&](size_t y, size_t x) -> int {
    if ((y + shift) % pad_h >= real_h || (x + shift) % pad_w >= real_w) return -1;
    if (shift == 0) return 0;
    int gy = y < pad_h - window ? 0 : (y < pad_h - shift ? 1 : 2);
    int gx = x < pad_w - window ? 0 : (x < pad_w - shift ? 1 : 2);
    return gy * 3 + gx;
  };

  TensorT<T> mask = TensorT<T>::zeros({nwh * nww, len, len});
  auto& data = mask.data();
  std::vector<int> reg(len);
  for (size_t wy = 0; wy < nwh; ++wy) {
    for (size_t wx = 0; wx < nww; ++wx) {
      for (size_t i = 0; i < len; ++i)
        reg[i] = region(wy * window + i / window, wx * window + i % window);
      T* m = data.data() + (wy * nww + wx) * len * len;
      for (size_t i = 0; i < len; ++i)
        for (size_t j = 0; j < len; ++j)
          if (reg[j] == -1 || (shift > 0 && reg[i] != reg[j])) m[i * len + j] = T(-1e9);
    }
  }
  return mask;
}

std::vector<size_t> relative_position_index(size_t window, size_t max_window) {
  const size_t len = window * window;
  const size_t span = 2 * max_window - 1;
  std::vector<size_t> idx(len * len);
  for (size_t i = 0; i < len; ++i) {
    const long yi = static_cast<long>(i / window), xi = static_cast<long>(i % window);
    for (size_t j = 0; j < len; ++j) {
      const long dy = yi - static_cast<long>(j / window);
      const long dx = xi - static_cast<long>(j % window);
      idx[i * len + j] = static_cast<size_t>(dy + static_cast<long>(max_window) - 1) * span +
                         static_cast<size_t>(dx + static_cast<long>(max_window) - 1);
    }
  }
  return idx;
}

template <typename T>
TensorT<T> window_attention(const TensorT<T>& tokens, const TensorT<T>& qkv_w,
                            const TensorT<T>& qkv_b, const TensorT<T>& proj_w,
                            const TensorT<T>& proj_b, const TensorT<T>& rel_bias,
                            const TensorT<T>& mask, size_t num_heads,
                            std::vector<float>* attn_out) {
  const size_t g = tokens.dim(0), len = tokens.dim(1), c = tokens.dim(2);
  if (c % num_heads != 0) fail("window_attention: dim not divisible by heads");
  const size_t dh = c / num_heads;

  TensorT<T> qkv = linear(tokens, qkv_w, qkv_b);          // (G, L, 3C)
  qkv = reshape(qkv, {g, len, 3, num_heads, dh});
  qkv = permute(qkv, {2, 0, 3, 1, 4});                    // (3, G, nh, L, dh)
  auto pick = [&](size_t which) {
    return reshape(slice(qkv, {which, 0, 0, 0, 0}, {1, g, num_heads, len, dh}),
                   {g * num_heads, len, dh});
  };
  TensorT<T> q = scale(pick(0), 1.0 / std::sqrt(static_cast<double>(dh)));
  TensorT<T> k = pick(1);
  TensorT<T> v = pick(2);

  TensorT<T> attn = bmm_nt(q, k);                         // (G*nh, L, L)
  if (rel_bias.defined()) attn = add_head_bias(attn, rel_bias, num_heads);
  if (mask.defined()) attn = add_window_mask(attn, mask, num_heads);
  attn = softmax_lastdim(attn);
  if (attn_out) {
    attn_out->resize(attn.numel());
    for (size_t i = 0; i < attn.numel(); ++i) (*attn_out)[i] = static_cast<float>(attn.data()[i]);
  }

  TensorT<T> out = bmm(attn, v);                          // (G*nh, L, dh)
  out = reshape(out, {g, num_heads, len, dh});
  out = permute(out, {0, 2, 1, 3});
  out = reshape(out, {g, len, c});
  return linear(out, proj_w, proj_b);
}

// ---- model --------------------------------------------------------------------

template <typename T>
TensorT<T>& SwinModelT<T>::add_param(const std::string& name, Shape shape, Rng& rng,
                                     double std_dev) {
  TensorT<T> t = TensorT<T>::zeros(std::move(shape), true);
  if (std_dev > 0.0) {
    for (T& v : t.data()) v = static_cast<T>(rng.normal() * std_dev);
  } else if (std_dev < 0.0) {
    for (T& v : t.data()) v = T(1);
  }
  index_[name] = params_.size();
  params_.emplace_back(name, std::move(t));
  return params_.back().second;
}

template <typename T>
SwinModelT<T>::SwinModelT(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(derive_seed(seed, {hash_str("model_init")}));
  const double std_dev = 0.02;
  const size_t span = 2 * cfg_.window - 1;

  add_param("patch_embed.weight", {cfg_.patch_size * cfg_.patch_size * 3, cfg_.embed_dim}, rng,
            std_dev);
  add_param("patch_embed.bias", {cfg_.embed_dim}, rng, 0.0);
  add_param("patch_embed.norm.g", {cfg_.embed_dim}, rng, -1.0);
  add_param("patch_embed.norm.b", {cfg_.embed_dim}, rng, 0.0);

  for (size_t s = 0; s < cfg_.stages(); ++s) {
    const size_t dim = cfg_.stage_dim(s);
    for (size_t b = 0; b < cfg_.depths[s]; ++b) {
      const std::string p = "stage" + std::to_string(s) + ".block" + std::to_string(b) + ".";
      add_param(p + "norm1.g", {dim}, rng, -1.0);
      add_param(p + "norm1.b", {dim}, rng, 0.0);
      add_param(p + "attn.qkv.weight", {dim, 3 * dim}, rng, std_dev);
      add_param(p + "attn.qkv.bias", {3 * dim}, rng, 0.0);
      add_param(p + "attn.rel_bias", {span * span, cfg_.heads[s]}, rng, std_dev);
      add_param(p + "attn.proj.weight", {dim, dim}, rng, std_dev);
      add_param(p + "attn.proj.bias", {dim}, rng, 0.0);
      add_param(p + "norm2.g", {dim}, rng, -1.0);
      add_param(p + "norm2.b", {dim}, rng, 0.0);
      add_param(p + "mlp.fc1.weight", {dim, cfg_.mlp_ratio * dim}, rng, std_dev);
      add_param(p + "mlp.fc1.bias", {cfg_.mlp_ratio * dim}, rng, 0.0);
      add_param(p + "mlp.fc2.weight", {cfg_.mlp_ratio * dim, dim}, rng, std_dev);
      add_param(p + "mlp.fc2.bias", {dim}, rng, 0.0);
    }
    if (s + 1 < cfg_.stages()) {
      const std::string p = "stage" + std::to_string(s) + ".merge.";
      add_param(p + "norm.g", {4 * dim}, rng, -1.0);
      add_param(p + "norm.b", {4 * dim}, rng, 0.0);
      add_param(p + "reduce.weight", {4 * dim, 2 * dim}, rng, std_dev);
    }
  }

  const size_t final_dim = cfg_.stage_dim(cfg_.stages() - 1);
  add_param("final_norm.g", {final_dim}, rng, -1.0);
  add_param("final_norm.b", {final_dim}, rng, 0.0);
  add_param("head.weight", {final_dim + cfg_.static_dim, cfg_.num_classes}, rng, std_dev);
  add_param("head.bias", {cfg_.num_classes}, rng, 0.0);
  if (cfg_.static_dim > 0)
    add_param("static.table", {cfg_.static_dim, cfg_.static_dim}, rng, std_dev);

  const size_t fp = cfg_.final_patch();
  add_param("mim.mask_token", {1, cfg_.embed_dim}, rng, std_dev);
  add_param("mim.head.weight", {final_dim, fp * fp * 3}, rng, std_dev);
  add_param("mim.head.bias", {fp * fp * 3}, rng, 0.0);
}

template <typename T>
TensorT<T>& SwinModelT<T>::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) fail("model: unknown parameter '" + name + "'");
  return params_[it->second].second;
}

template <typename T>
std::vector<TensorT<T>> SwinModelT<T>::trainable() {
  std::vector<TensorT<T>> out;
  out.reserve(params_.size());
  for (auto& [name, t] : params_) out.push_back(t);
  return out;
}

template <typename T>
void SwinModelT<T>::set_requires_grad(bool rg) {
  for (auto& [name, t] : params_) t.set_requires_grad(rg);
}

template <typename T>
TensorT<T> SwinModelT<T>::rel_bias_for(size_t stage, size_t block, size_t w_eff) {
  const std::string p = "stage" + std::to_string(stage) + ".block" + std::to_string(block) + ".";
  const size_t len = w_eff * w_eff;
  TensorT<T> rows = embedding_lookup(param(p + "attn.rel_bias"),
                                     relative_position_index(w_eff, cfg_.window));
  rows = reshape(rows, {len, len, cfg_.heads[stage]});
  return permute(rows, {2, 0, 1});  // (nh, L, L)
}

template <typename T>
TensorT<T> SwinModelT<T>::block_forward(TensorT<T> x, size_t stage, size_t block, bool shifted,
                                        AttnProbe* probe) {
  const std::string p = "stage" + std::to_string(stage) + ".block" + std::to_string(block) + ".";
  const size_t b = x.dim(0), gh = x.dim(1), gw = x.dim(2), c = x.dim(3);
  const size_t w_eff = std::min({cfg_.window, gh, gw});
  const size_t shift = (shifted && std::min(gh, gw) > cfg_.window) ? cfg_.window / 2 : 0;

  TensorT<T> shortcut = x;
  TensorT<T> h = layer_norm(x, param(p + "norm1.g"), param(p + "norm1.b"));
  const size_t pad_h = (w_eff - gh % w_eff) % w_eff;
  const size_t pad_w = (w_eff - gw % w_eff) % w_eff;
  h = pad_hw(h, pad_h, pad_w);
  const size_t ph = gh + pad_h, pw = gw + pad_w;
  if (shift > 0) h = roll2d(h, -static_cast<long>(shift), -static_cast<long>(shift));

  TensorT<T> windows = window_partition(h, w_eff);
  TensorT<T> mask;
  if (shift > 0 || pad_h > 0 || pad_w > 0)
    mask = build_window_mask<T>(gh, gw, ph, pw, w_eff, shift);

  std::vector<float> attn_copy;
  TensorT<T> attended = window_attention(
      windows, param(p + "attn.qkv.weight"), param(p + "attn.qkv.bias"),
      param(p + "attn.proj.weight"), param(p + "attn.proj.bias"),
      rel_bias_for(stage, block, w_eff), mask, cfg_.heads[stage],
      probe ? &attn_copy : nullptr);
  if (probe) {
    AttnRecord rec;
    rec.stage = stage;
    rec.block = block;
    rec.heads = cfg_.heads[stage];
    rec.win_len = w_eff * w_eff;
    rec.grid_h = ph;
    rec.grid_w = pw;
    rec.real_h = gh;
    rec.real_w = gw;
    rec.window = w_eff;
    rec.shift = shift;
    rec.weights = std::move(attn_copy);
    probe->records.push_back(std::move(rec));
  }

  h = window_reverse(attended, w_eff, b, ph, pw);
  if (shift > 0) h = roll2d(h, static_cast<long>(shift), static_cast<long>(shift));
  if (pad_h > 0 || pad_w > 0) h = slice(h, {0, 0, 0, 0}, {b, gh, gw, c});
  x = add(shortcut, h);

  TensorT<T> m = layer_norm(x, param(p + "norm2.g"), param(p + "norm2.b"));
  m = linear(m, param(p + "mlp.fc1.weight"), param(p + "mlp.fc1.bias"));
  m = gelu(m, cfg_.gelu_exact);
  m = linear(m, param(p + "mlp.fc2.weight"), param(p + "mlp.fc2.bias"));
  return add(x, m);
}

template <typename T>
TensorT<T> SwinModelT<T>::patch_merge(TensorT<T> x, size_t stage) {
  const std::string p = "stage" + std::to_string(stage) + ".merge.";
  const size_t b = x.dim(0), gh = x.dim(1), gw = x.dim(2), c = x.dim(3);
  x = pad_hw(x, gh % 2, gw % 2);
  const size_t h2 = (gh + 1) / 2 * 2, w2 = (gw + 1) / 2 * 2;
  x = reshape(x, {b, h2 / 2, 2, w2 / 2, 2, c});
  x = permute(x, {0, 1, 3, 2, 4, 5});
  x = reshape(x, {b, h2 / 2, w2 / 2, 4 * c});
  x = layer_norm(x, param(p + "norm.g"), param(p + "norm.b"));
  return linear(x, param(p + "reduce.weight"), TensorT<T>());
}

template <typename T>
TensorT<T> SwinModelT<T>::encode_tokens(TensorT<T> tokens, size_t grid_h, size_t grid_w,
                                        AttnProbe* probe, size_t* final_h, size_t* final_w) {
  TensorT<T> x = reshape(tokens, {tokens.dim(0), grid_h, grid_w, cfg_.embed_dim});
  for (size_t s = 0; s < cfg_.stages(); ++s) {
    for (size_t blk = 0; blk < cfg_.depths[s]; ++blk)
      x = block_forward(x, s, blk, blk % 2 == 1, probe);
    if (s + 1 < cfg_.stages()) x = patch_merge(x, s);
  }
  if (final_h) *final_h = x.dim(1);
  if (final_w) *final_w = x.dim(2);
  return x;
}

namespace {

template <typename T>
TensorT<T> unfold_patches(const TensorT<T>& images, size_t patch) {
  const size_t b = images.dim(0), h = images.dim(1), w = images.dim(2);
  if (images.rank() != 4 || images.dim(3) != 3) fail("patch_embed: expected (B,H,W,3) image");
  if (h % patch != 0 || w % patch != 0)
    fail("patch_embed: image " + std::to_string(h) + "x" + std::to_string(w) +
         " not divisible by patch size " + std::to_string(patch) +
         " (pad with background first)");
  const size_t hp = h / patch, wp = w / patch;
  TensorT<T> x = reshape(images, {b, hp, patch, wp, patch, 3});
  x = permute(x, {0, 1, 3, 2, 4, 5});
  return reshape(x, {b, hp * wp, patch * patch * 3});
}

}  // namespace

template <typename T>
TensorT<T> SwinModelT<T>::forward_classify(const TensorT<T>& images,
                                           const std::vector<std::string>& sentences,
                                           AttnProbe* probe) {
  const size_t b = images.dim(0);
  const size_t hp = images.dim(1) / cfg_.patch_size, wp = images.dim(2) / cfg_.patch_size;
  TensorT<T> x = unfold_patches(images, cfg_.patch_size);
  x = linear(x, param("patch_embed.weight"), param("patch_embed.bias"));
  x = layer_norm(x, param("patch_embed.norm.g"), param("patch_embed.norm.b"));

  size_t fh = 0, fw = 0;
  x = encode_tokens(x, hp, wp, probe, &fh, &fw);
  x = reshape(x, {b, fh * fw, cfg_.stage_dim(cfg_.stages() - 1)});
  x = layer_norm(x, param("final_norm.g"), param("final_norm.b"));
  TensorT<T> pooled = mean_axis(x, 1);  // (B, C_final)

  if (cfg_.static_dim > 0) {
    if (sentences.size() != b)
      fail("forward_classify: static branch enabled, need one sentence per sample");
    std::vector<TensorT<T>> vecs;
    vecs.reserve(b);
    for (const std::string& s : sentences) vecs.push_back(encode_static(s));
    pooled = concat<T>({pooled, concat(vecs, 0)}, 1);
  } else if (!sentences.empty() && sentences.size() != b) {
    fail("forward_classify: sentences given but static branch is disabled");
  }
  return linear(pooled, param("head.weight"), param("head.bias"));
}

template <typename T>
TensorT<T> SwinModelT<T>::encode_static(const std::string& sentence) {
  if (cfg_.static_dim == 0) fail("encode_static: static branch disabled");
  std::vector<size_t> ids = static_token_buckets(sentence, cfg_.static_dim);
  if (ids.empty()) return TensorT<T>::zeros({1, cfg_.static_dim});
  TensorT<T> rows = embedding_lookup(param("static.table"), ids);
  return reshape(mean_axis(rows, 0), {1, cfg_.static_dim});
}

template <typename T>
std::vector<size_t> SwinModelT<T>::static_token_buckets(const std::string& sentence,
                                                        size_t buckets) {
  std::vector<size_t> ids;
  std::string token;
  auto flush = [&] {
    if (!token.empty()) {
      ids.push_back(hash_str(token) % buckets);
      token.clear();
    }
  };
  for (char ch : sentence) {
    if (std::isalnum(static_cast<unsigned char>(ch)))
      token.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    else
      flush();
  }
  flush();
  return ids;
}

template <typename T>
typename SwinModelT<T>::MimOutput SwinModelT<T>::forward_mim(const TensorT<T>& images,
                                                             const std::vector<MimMask>& masks) {
  const size_t b = images.dim(0), h = images.dim(1), w = images.dim(2);
  const size_t hp = h / cfg_.patch_size, wp = w / cfg_.patch_size;
  if (masks.size() != b) fail("forward_mim: need one mask per sample");
  const size_t down = size_t{1} << (cfg_.stages() - 1);
  if (hp % down != 0 || wp % down != 0)
    fail("forward_mim: mask/geometry mismatch (token grid not divisible by stage downscale)");
  for (const MimMask& m : masks)
    if (m.rows != hp || m.cols != wp)
      fail("forward_mim: mask/geometry mismatch (mask grid vs patch grid)");

  size_t masked_patches = 0;
  for (const MimMask& m : masks) masked_patches += m.masked_count;
  const size_t omega = masked_patches * cfg_.patch_size * cfg_.patch_size * 3;
  if (omega == 0) fail("forward_mim: empty mask");

  TensorT<T> x = unfold_patches(images, cfg_.patch_size);
  x = linear(x, param("patch_embed.weight"), param("patch_embed.bias"));  // (B,T,C)
  const size_t tokens = hp * wp, c = cfg_.embed_dim;

  // Replace masked patch embeddings with the learned mask token.
  TensorT<T> m01 = TensorT<T>::zeros({b, tokens, c});
  TensorT<T> m10 = TensorT<T>::full({b, tokens, c}, T(1));
  for (size_t i = 0; i < b; ++i)
    for (size_t t = 0; t < tokens; ++t)
      if (masks[i].masked[t]) {
        for (size_t j = 0; j < c; ++j) {
          m01.data()[(i * tokens + t) * c + j] = T(1);
          m10.data()[(i * tokens + t) * c + j] = T(0);
        }
      }
  TensorT<T> ones = TensorT<T>::full({b * tokens, 1}, T(1));
  TensorT<T> tile = reshape(matmul(ones, param("mim.mask_token")), {b, tokens, c});
  x = add(mul_const(x, m10), mul_const(tile, m01));

  x = layer_norm(x, param("patch_embed.norm.g"), param("patch_embed.norm.b"));
  size_t fh = 0, fw = 0;
  x = encode_tokens(x, hp, wp, nullptr, &fh, &fw);
  const size_t fdim = cfg_.stage_dim(cfg_.stages() - 1);
  x = reshape(x, {b, fh * fw, fdim});
  x = layer_norm(x, param("final_norm.g"), param("final_norm.b"));
  x = linear(x, param("mim.head.weight"), param("mim.head.bias"));  // (B, Tf, K*K*3)

  const size_t fp = cfg_.final_patch();
  x = reshape(x, {b, fh, fw, fp, fp, 3});
  x = permute(x, {0, 1, 3, 2, 4, 5});
  TensorT<T> recon = reshape(x, {b, h, w, 3});

  // Pixel-level mask: 1 inside masked patches, 0 elsewhere.
  TensorT<T> pix = TensorT<T>::zeros({b, h, w, 3});
  for (size_t i = 0; i < b; ++i)
    for (size_t py = 0; py < hp; ++py)
      for (size_t px = 0; px < wp; ++px) {
        if (!masks[i].masked[py * wp + px]) continue;
        for (size_t y = py * cfg_.patch_size; y < (py + 1) * cfg_.patch_size; ++y)
          for (size_t xx = px * cfg_.patch_size; xx < (px + 1) * cfg_.patch_size; ++xx)
            for (size_t ch = 0; ch < 3; ++ch)
              pix.data()[((i * h + y) * w + xx) * 3 + ch] = T(1);
      }

  TensorT<T> diff = mul_const(abs_val(sub(recon, images)), pix);
  TensorT<T> loss = scale(sum_all(diff), 1.0 / static_cast<double>(omega));
  return {loss, recon, omega};
}

template <typename T>
std::vector<double> SwinModelT<T>::attention_summary(const TensorT<T>& image, size_t* out_h,
                                                     size_t* out_w) {
  if (image.dim(0) != 1) fail("attention_summary: expects a single image");
  AttnProbe probe;
  std::vector<std::string> sentences;
  if (cfg_.static_dim > 0) sentences.push_back("");
  forward_classify(image, sentences, &probe);

  const size_t last_stage = cfg_.stages() - 1;
  std::vector<double> acc;
  size_t th = 0, tw = 0, blocks = 0;
  for (const AttnRecord& rec : probe.records) {
    if (rec.stage != last_stage) continue;
    const size_t w = rec.window, len = rec.win_len;
    const size_t nwh = rec.grid_h / w, nww = rec.grid_w / w;
    std::vector<double> canvas(rec.grid_h * rec.grid_w, 0.0);
    for (size_t wi = 0; wi < nwh * nww; ++wi) {
      const size_t wy = wi / nww, wx = wi % nww;
      for (size_t key = 0; key < len; ++key) {
        double r = 0.0;
        for (size_t hd = 0; hd < rec.heads; ++hd) {
          const float* slab = rec.weights.data() + (wi * rec.heads + hd) * len * len;
          for (size_t qq = 0; qq < len; ++qq) r += slab[qq * len + key];
        }
        r /= static_cast<double>(rec.heads * len);
        canvas[(wy * w + key / w) * rec.grid_w + (wx * w + key % w)] = r;
      }
    }
    // Undo the cyclic shift, then drop padding.
    if (acc.empty()) {
      th = rec.real_h;
      tw = rec.real_w;
      acc.assign(th * tw, 0.0);
    }
    for (size_t y = 0; y < rec.real_h; ++y)
      for (size_t x = 0; x < rec.real_w; ++x) {
        const size_t ry = (y + rec.grid_h - rec.shift) % rec.grid_h;
        const size_t rx = (x + rec.grid_w - rec.shift) % rec.grid_w;
        acc[y * tw + x] += canvas[ry * rec.grid_w + rx];
      }
    ++blocks;
  }
  if (blocks == 0) fail("attention_summary: no attention records");
  for (double& v : acc) v /= static_cast<double>(blocks);

  const size_t img_h = image.dim(1), img_w = image.dim(2);
  std::vector<double> heat(img_h * img_w);
  for (size_t y = 0; y < img_h; ++y)
    for (size_t x = 0; x < img_w; ++x)
      heat[y * img_w + x] = acc[(y * th / img_h) * tw + (x * tw / img_w)];

  double lo = heat[0], hi = heat[0];
  for (double v : heat) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi - lo;
  for (double& v : heat) v = span > 0.0 ? (v - lo) / span : 0.0;
  if (out_h) *out_h = img_h;
  if (out_w) *out_w = img_w;
  return heat;
}

template <typename T>
void SwinModelT<T>::save(const std::string& path, const std::string& config_text) const {
  save_checkpoint(path, config_text.empty() ? cfg_.to_text() : config_text, params_);
}

template <typename T>
void SwinModelT<T>::load(const std::string& path) {
  std::string text;
  std::vector<std::pair<std::string, TensorT<T>>> stored;
  load_checkpoint(path, text, stored);
  std::map<std::string, TensorT<T>> by_name;
  for (auto& [name, t] : stored) by_name.emplace(name, t);
  for (auto& [name, t] : params_) {
    auto it = by_name.find(name);
    if (it == by_name.end()) fail(path + ": checkpoint missing tensor '" + name + "'");
    if (it->second.shape() != t.shape())
      fail(path + ": shape mismatch for '" + name + "' (checkpoint/config mismatch)");
    t.data() = it->second.data();
    by_name.erase(it);
  }
  if (!by_name.empty())
    fail(path + ": checkpoint has unknown tensor '" + by_name.begin()->first +
         "' (checkpoint/config mismatch)");
}

template <typename T>
std::vector<std::string> SwinModelT<T>::warm_start(const std::string& path) {
  std::string text;
  std::vector<std::pair<std::string, TensorT<T>>> stored;
  load_checkpoint(path, text, stored);
  std::vector<std::string> loaded;
  for (auto& [name, t] : stored) {
    if (name.rfind("head.", 0) == 0) continue;  // classifier head is reinitialized
    auto it = index_.find(name);
    if (it == index_.end()) continue;
    TensorT<T>& dst = params_[it->second].second;
    if (dst.shape() != t.shape()) continue;
    dst.data() = t.data();
    loaded.push_back(name);
  }
  if (loaded.empty()) fail(path + ": warm start matched no encoder tensors");
  return loaded;
}

// ---- instantiations --------------------------------------------------------------

template class SwinModelT<float>;
template class SwinModelT<double>;

#define VITST_SWIN_INSTANTIATE(T)                                                           \
  template TensorT<T> window_partition<T>(const TensorT<T>&, size_t);                       \
  template TensorT<T> window_reverse<T>(const TensorT<T>&, size_t, size_t, size_t, size_t); \
  template TensorT<T> build_window_mask<T>(size_t, size_t, size_t, size_t, size_t, size_t); \
  template TensorT<T> window_attention<T>(const TensorT<T>&, const TensorT<T>&,             \
                                          const TensorT<T>&, const TensorT<T>&,             \
                                          const TensorT<T>&, const TensorT<T>&,             \
                                          const TensorT<T>&, size_t, std::vector<float>*);

VITST_SWIN_INSTANTIATE(float)
VITST_SWIN_INSTANTIATE(double)

#undef VITST_SWIN_INSTANTIATE

}  // namespace vitst
