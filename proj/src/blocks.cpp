#include "panoswin/blocks.hpp"

#include <cmath>
#include <stdexcept>

#include "panoswin/equirect.hpp"

namespace panoswin {

const char* mode_name(Mode m) { return m == Mode::kPano ? "pano" : "swin"; }

Mode parse_mode(const std::string& s) {
  if (s == "pano") return Mode::kPano;
  if (s == "swin") return Mode::kSwin;
  throw std::invalid_argument("unknown mode '" + s + "' (expected pano or swin)");
}

const char* block_kind_name(BlockKind k) {
  switch (k) {
    case BlockKind::kW: return "W";
    case BlockKind::kSW: return "SW";
    case BlockKind::kPSW: return "PSW";
    case BlockKind::kPA: return "PA";
  }
  return "?";
}

Tensor Initializer::uniform(Shape shape, double bound) {
  std::uniform_real_distribution<double> d(-bound, bound);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = d(rng_);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor Initializer::normal(Shape shape, double stddev) {
  std::normal_distribution<double> d(0.0, stddev);
  std::vector<double> v(numel(shape));
  // Truncated at two standard deviations.
  for (double& x : v) {
    do {
      x = d(rng_);
    } while (std::abs(x) > 2.0 * stddev);
  }
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor Initializer::constant(Shape shape, double value) { return Tensor::full(std::move(shape), value, true); }

Linear Linear::make(Initializer& init, std::size_t in, std::size_t out, bool with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  l.weight = init.uniform({out, in}, bound);
  if (with_bias) l.bias = init.uniform({out}, bound);
  return l;
}

Tensor Linear::operator()(const Tensor& x) const {
  return bias.defined() ? ops::linear(x, weight, bias) : ops::linear(x, weight);
}

void Linear::collect(const std::string& prefix, std::vector<Param>& out) const {
  out.push_back({prefix + ".weight", weight, false});
  if (bias.defined()) out.push_back({prefix + ".bias", bias, false});
}

LayerNorm LayerNorm::make(Initializer& init, std::size_t dim) { return {init.constant({dim}, 1.0), init.constant({dim}, 0.0)}; }

void LayerNorm::collect(const std::string& prefix, std::vector<Param>& out) const {
  out.push_back({prefix + ".gamma", gamma, false});
  out.push_back({prefix + ".beta", beta, false});
}

RelBiasTable RelBiasTable::make(Initializer& init, std::size_t heads, std::size_t m) {
  const std::size_t slots = (2 * m - 1) * (2 * m - 1);
  return {init.constant({heads, slots}, 0.0), init.normal({heads, slots}, 0.02)};
}

void RelBiasTable::collect(const std::string& prefix, std::vector<Param>& out) const {
  out.push_back({prefix + ".alpha", alpha, false});
  out.push_back({prefix + ".beta", beta, false});
}

double haversine(const LonLat& a, const LonLat& b) {
  const double sv = std::sin(0.5 * (b.v - a.v)), su = std::sin(0.5 * (b.u - a.u));
  return sv * sv + std::cos(b.v) * std::cos(a.v) * su * su;
}

BiasGeometry BiasGeometry::make(std::size_t heads, const WindowLayout& layout, const std::vector<std::vector<LonLat>>& query_coords,
                                const std::vector<std::vector<LonLat>>& key_coords) {
  const std::size_t m = layout.m, area = m * m;
  if (query_coords.size() != layout.num_windows() || key_coords.size() != layout.num_windows()) {
    throw std::invalid_argument("BiasGeometry: coordinate lists do not match the layout's window count");
  }
  BiasGeometry g;
  g.windows = layout.num_windows();
  g.m = m;
  g.heads = heads;
  g.rel_index.resize(g.windows * area * area);
  std::vector<double> hav(g.windows * heads * area * area);
  for (std::size_t w = 0; w < g.windows; ++w) {
    if (query_coords[w].size() != area || key_coords[w].size() != area) {
      throw std::invalid_argument("BiasGeometry: window " + std::to_string(w) + " does not hold m^2 coordinates");
    }
    for (std::size_t i = 0; i < area; ++i) {
      for (std::size_t j = 0; j < area; ++j) {
        g.rel_index[(w * area + i) * area + j] = layout.relative_slot(w, i, j);
        const double h = panoswin::haversine(query_coords[w][i], key_coords[w][j]);
        for (std::size_t hd = 0; hd < heads; ++hd) hav[((w * heads + hd) * area + i) * area + j] = h;
      }
    }
  }
  g.haversine = Tensor::from({g.windows, heads, area * area}, std::move(hav));
  return g;
}

Tensor rel_bias(const RelBiasTable& table, const BiasGeometry& geo, Mode mode) {
  const std::size_t area = geo.m * geo.m;
  auto lookup = [&](const Tensor& t) {
    return ops::permute(ops::reshape(ops::gather(t, 1, geo.rel_index), {geo.heads, geo.windows, area * area}), {1, 0, 2});
  };
  Tensor out = lookup(table.beta);
  if (mode == Mode::kPano) out = ops::add(ops::mul(lookup(table.alpha), geo.haversine), out);
  return ops::reshape(out, {geo.windows, geo.heads, area, area});
}

AbsPosEncoder AbsPosEncoder::make(Initializer& init, std::size_t dim) {
  return {Linear::make(init, 5, dim), Linear::make(init, dim, dim)};
}

void AbsPosEncoder::collect(const std::string& prefix, std::vector<Param>& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

Tensor abs_pos_embed(const PatchGrid& grid, const AbsPosEncoder& enc, Mode mode) {
  const std::size_t dim = enc.fc2.weight.dim(0);
  if (mode == Mode::kSwin) return Tensor::zeros({grid.size(), dim});
  std::vector<double> feats;
  feats.reserve(grid.size() * 5);
  for (const LonLat& p : grid.centers()) {
    const Cart3 c = sph(p);
    feats.insert(feats.end(), {c.x, c.y, c.z, p.u, p.v});
  }
  const Tensor f = Tensor::from({grid.size(), 5}, std::move(feats));
  return enc.fc2(ops::gelu(enc.fc1(f)));
}

AttentionOutput multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& bias, std::size_t heads) {
  if (q.rank() != 3 || k.shape() != q.shape() || v.shape() != q.shape()) {
    throw ShapeError("multi_head_attention: q, k, v must share one [G, m^2, dim] shape, got " + shape_str(q.shape()) + ", " +
                     shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  const std::size_t g = q.dim(0), area = q.dim(1), dim = q.dim(2);
  if (heads == 0 || dim % heads != 0) throw ShapeError("multi_head_attention: dim " + std::to_string(dim) + " not divisible by heads");
  const std::size_t hd = dim / heads;
  auto split = [&](const Tensor& t) { return ops::permute(ops::reshape(t, {g, area, heads, hd}), {0, 2, 1, 3}); };

  Tensor logits = ops::matmul(ops::scale(split(q), 1.0 / std::sqrt(static_cast<double>(hd))), split(k), true);
  if (bias.defined()) {
    const std::size_t nw = bias.dim(0);
    if (g % nw != 0 || bias.shape() != Shape{nw, heads, area, area}) {
      throw ShapeError("multi_head_attention: bias " + shape_str(bias.shape()) + " does not fit logits " + shape_str(logits.shape()));
    }
    logits = ops::reshape(ops::add_tiled(ops::reshape(logits, {g / nw, nw, heads, area, area}), bias), {g, heads, area, area});
  }
  AttentionOutput res;
  res.probs = ops::softmax_last(logits);
  res.out = ops::reshape(ops::permute(ops::matmul(res.probs, split(v)), {0, 2, 1, 3}), {g, area, dim});
  return res;
}

WindowAttention WindowAttention::make(Initializer& init, const AttentionConfig& cfg) {
  if (cfg.heads == 0 || cfg.dim % cfg.heads != 0) {
    throw std::invalid_argument("AttentionConfig: dim " + std::to_string(cfg.dim) + " not divisible by " + std::to_string(cfg.heads) +
                                " heads");
  }
  WindowAttention a;
  a.cfg = cfg;
  a.qkv = Linear::make(init, cfg.dim, 3 * cfg.dim);
  a.proj = Linear::make(init, cfg.dim, cfg.dim);
  a.table = RelBiasTable::make(init, cfg.heads, cfg.m);
  return a;
}

void WindowAttention::collect(const std::string& prefix, std::vector<Param>& out) const {
  qkv.collect(prefix + ".qkv", out);
  proj.collect(prefix + ".proj", out);
  table.collect(prefix + ".rel", out);
}

AttentionOutput w_msa(const Tensor& x, const WindowAttention& attn, const Tensor& bias) {
  const std::size_t dim = attn.cfg.dim;
  if (x.rank() != 3 || x.dim(2) != dim) throw ShapeError("w_msa: expected [windows, m^2, " + std::to_string(dim) + "], got " + shape_str(x.shape()));
  const Tensor qkv = attn.qkv(x);
  AttentionOutput res = multi_head_attention(ops::slice(qkv, 2, 0, dim), ops::slice(qkv, 2, dim, 2 * dim),
                                             ops::slice(qkv, 2, 2 * dim, 3 * dim), bias, attn.cfg.heads);
  res.out = attn.proj(res.out);
  return res;
}

WindowPlan WindowPlan::make(const WindowLayout& layout, const PatchGrid& grid, std::size_t heads, const std::vector<double>& mask) {
  WindowPlan p;
  p.layout = layout;
  p.gather = layout.gather_order();
  p.scatter = layout.scatter_order();
  const auto centers = grid.centers();
  std::vector<std::vector<LonLat>> coords;
  for (const auto& grp : layout.groups) {
    std::vector<LonLat> c;
    for (std::size_t idx : grp) c.push_back(centers[idx]);
    coords.push_back(std::move(c));
  }
  p.geometry = BiasGeometry::make(heads, layout, coords, coords);
  if (!mask.empty()) {
    const std::size_t area = grid.m * grid.m, nw = layout.num_windows();
    std::vector<double> full(nw * heads * area * area);
    for (std::size_t w = 0; w < nw; ++w) {
      for (std::size_t h = 0; h < heads; ++h) {
        std::copy_n(mask.begin() + static_cast<long>(w * area * area), area * area, full.begin() + static_cast<long>((w * heads + h) * area * area));
      }
    }
    p.mask = Tensor::from({nw, heads, area, area}, std::move(full));
  }
  return p;
}

namespace {

Tensor to_windows(const Tensor& x, const std::vector<std::size_t>& order, std::size_t area) {
  const std::size_t b = x.dim(0), n = x.dim(1), c = x.dim(2);
  return ops::reshape(ops::gather(x, 1, order), {b * n / area, area, c});
}

Tensor from_windows(const Tensor& xw, const std::vector<std::size_t>& scatter, std::size_t batch) {
  const std::size_t c = xw.dim(2);
  return ops::gather(ops::reshape(xw, {batch, scatter.size(), c}), 1, scatter);
}

void require_tokens(const char* op, const Tensor& x, std::size_t n, std::size_t dim) {
  if (x.rank() != 3 || x.dim(1) != n || x.dim(2) != dim) {
    throw ShapeError(std::string(op) + ": expected tokens [B, " + std::to_string(n) + ", " + std::to_string(dim) + "], got " +
                     shape_str(x.shape()));
  }
}

}  // namespace

AttentionOutput windowed_attention(const Tensor& x, const WindowAttention& attn, const WindowPlan& plan, Mode mode) {
  const std::size_t area = plan.geometry.m * plan.geometry.m;
  require_tokens("windowed_attention", x, plan.gather.size(), attn.cfg.dim);
  Tensor bias = rel_bias(attn.table, plan.geometry, mode);
  if (plan.mask.defined()) bias = ops::add(bias, plan.mask);
  AttentionOutput res = w_msa(to_windows(x, plan.gather, area), attn, bias);
  res.out = from_windows(res.out, plan.scatter, x.dim(0));
  return res;
}

AttentionOutput psw_msa(const Tensor& x, const WindowAttention& attn, const WindowPlan& psw_plan, Mode mode) {
  return windowed_attention(x, attn, psw_plan, mode);
}

PitchPlan PitchPlan::make(const PatchGrid& grid, std::size_t heads) {
  if (grid.cols != 2 * grid.rows) {
    throw std::invalid_argument("pitch attention needs a 2:1 patch grid, got " + std::to_string(grid.rows) + "x" + std::to_string(grid.cols));
  }
  PitchPlan p;
  p.original = WindowPlan::make(partition_windows(grid), grid, heads);
  const Rotation3 rot = pitch_rotation();
  p.rotate_taps = compile_grid(rotation_grid(grid.rows, grid.cols, rot), grid.rows, grid.cols);

  const std::size_t m = grid.m, area = m * m;
  const auto centers = pitch_window_centers(grid);
  SampleGrid sg;
  sg.out_h = centers.size();
  sg.out_w = area;
  const double half = 0.5 * static_cast<double>(m - 1);
  std::vector<std::vector<LonLat>> key_coords;
  for (const LonLat& c : centers) {
    const auto [rc, cc] = lonlat_pixel(c, grid.rows, grid.cols);
    std::vector<LonLat> keys;
    for (std::size_t a = 0; a < m; ++a) {
      for (std::size_t b = 0; b < m; ++b) {
        const double r = rc + static_cast<double>(a) - half, k = cc + static_cast<double>(b) - half;
        sg.rows.push_back(r);
        sg.cols.push_back(k);
        // Going through sph() folds rows past a pole onto the far side.
        const LonLat in_rotated = sph_inv(sph(grid.center_at(r, k)));
        p.sampled_coords_rotated.push_back(in_rotated);
        keys.push_back(sph_inv(rot.apply(sph(in_rotated))));
      }
    }
    key_coords.push_back(std::move(keys));
  }
  p.window_taps = compile_grid(sg, grid.rows, grid.cols);

  const auto all = grid.centers();
  std::vector<std::vector<LonLat>> query_coords;
  for (const auto& grp : p.original.layout.groups) {
    std::vector<LonLat> q;
    for (std::size_t idx : grp) q.push_back(all[idx]);
    query_coords.push_back(std::move(q));
  }
  p.geometry = BiasGeometry::make(heads, p.original.layout, query_coords, key_coords);
  return p;
}

AttentionOutput pitch_attention(const Tensor& x, const WindowAttention& attn, const PitchPlan& plan, Mode mode, bool value_from_key) {
  const std::size_t dim = attn.cfg.dim, m = plan.geometry.m, area = m * m;
  require_tokens("pitch_attention", x, plan.original.gather.size(), dim);
  const std::size_t batch = x.dim(0);
  const Tensor qkv = attn.qkv(to_windows(x, plan.original.gather, area));
  const Tensor q = ops::slice(qkv, 2, 0, dim);
  Tensor k = ops::slice(qkv, 2, dim, 2 * dim);
  Tensor v = ops::slice(qkv, 2, 2 * dim, 3 * dim);
  Tensor bias;
  if (mode == Mode::kSwin) {
    bias = rel_bias(attn.table, plan.original.geometry, mode);
  } else {
    const Tensor rotated = ops::resample(x, 1, plan.rotate_taps);
    const Tensor sampled = ops::reshape(ops::resample(rotated, 1, plan.window_taps), {batch * plan.geometry.windows, area, dim});
    const Tensor& w = attn.qkv.weight;
    const Tensor& b = attn.qkv.bias;
    k = ops::linear(sampled, ops::slice(w, 0, dim, 2 * dim), ops::slice(b, 0, dim, 2 * dim));
    if (value_from_key) v = ops::linear(sampled, ops::slice(w, 0, 2 * dim, 3 * dim), ops::slice(b, 0, 2 * dim, 3 * dim));
    bias = rel_bias(attn.table, plan.geometry, mode);
  }
  AttentionOutput res = multi_head_attention(q, k, v, bias, attn.cfg.heads);
  res.out = from_windows(attn.proj(res.out), plan.original.scatter, batch);
  return res;
}

PatchEmbed PatchEmbed::make(Initializer& init, std::size_t in_ch, std::size_t dim, std::size_t stride) {
  if (stride != 2 && stride != 4) throw std::invalid_argument("patch embedding stride must be 2 or 4, got " + std::to_string(stride));
  PatchEmbed p;
  p.stride = stride;
  const std::size_t c1 = 3 * dim, c2 = 7 * dim;
  auto conv = [&](std::size_t cin, std::size_t cout, Tensor& w, Tensor& b) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin * 9));
    w = init.uniform({cout, cin, 3, 3}, bound);
    b = init.uniform({cout}, bound);
  };
  conv(in_ch, c1, p.w1, p.b1);
  conv(c1, c2, p.w2, p.b2);
  conv(c2, dim, p.w3, p.b3);
  p.norm = LayerNorm::make(init, dim);
  return p;
}

Tensor PatchEmbed::operator()(const Tensor& img) const {
  if (img.rank() != 4 || img.dim(2) % stride != 0 || img.dim(3) % stride != 0) {
    throw ShapeError("patch_embed: input " + shape_str(img.shape()) + " is not [B, c, H, W] with H, W divisible by " + std::to_string(stride));
  }
  const std::size_t s2 = stride == 4 ? 2 : 1;
  Tensor y = ops::gelu(ops::conv2d(img, w1, b1, {2, 1, true}));
  y = ops::gelu(ops::conv2d(y, w2, b2, {s2, 1, true}));
  y = ops::conv2d(y, w3, b3, {1, 1, true});
  const std::size_t b = y.dim(0), d = y.dim(1), h = y.dim(2), w = y.dim(3);
  return norm(ops::reshape(ops::permute(y, {0, 2, 3, 1}), {b, h * w, d}));
}

void PatchEmbed::collect(const std::string& prefix, std::vector<Param>& out) const {
  out.push_back({prefix + ".conv1.weight", w1, false});
  out.push_back({prefix + ".conv1.bias", b1, false});
  out.push_back({prefix + ".conv2.weight", w2, false});
  out.push_back({prefix + ".conv2.bias", b2, false});
  out.push_back({prefix + ".conv3.weight", w3, false});
  out.push_back({prefix + ".conv3.bias", b3, false});
  norm.collect(prefix + ".norm", out);
}

Tensor merge_neighbors(const Tensor& x, const PatchGrid& grid) {
  if (grid.rows % 2 != 0 || grid.cols % 2 != 0) {
    throw ShapeError("patch_merge: grid " + std::to_string(grid.rows) + "x" + std::to_string(grid.cols) + " has an odd extent");
  }
  if (x.rank() != 3 || x.dim(1) != grid.size()) throw ShapeError("patch_merge: tokens " + shape_str(x.shape()) + " do not match the grid");
  const std::size_t b = x.dim(0), d = x.dim(2);
  const Tensor t = ops::reshape(x, {b, grid.rows / 2, 2, grid.cols / 2, 2, d});
  return ops::reshape(ops::permute(t, {0, 1, 3, 4, 2, 5}), {b, grid.size() / 4, 4 * d});
}

PatchMerge PatchMerge::make(Initializer& init, std::size_t dim) {
  return {LayerNorm::make(init, 4 * dim), Linear::make(init, 4 * dim, 2 * dim, false)};
}

Tensor PatchMerge::operator()(const Tensor& x, const PatchGrid& grid) const { return reduce(norm(merge_neighbors(x, grid))); }

void PatchMerge::collect(const std::string& prefix, std::vector<Param>& out) const {
  norm.collect(prefix + ".norm", out);
  reduce.collect(prefix + ".reduce", out);
}

TransformerBlock::TransformerBlock(BlockKind kind, const PatchGrid& grid, std::size_t dim, std::size_t heads, Initializer& init,
                                   const BlockOptions& opt)
    : kind_(kind), grid_(grid), opt_(opt) {
  norm1_ = LayerNorm::make(init, dim);
  attn_ = WindowAttention::make(init, {dim, heads, grid.m, Mode::kPano});
  norm2_ = LayerNorm::make(init, dim);
  const auto hidden = static_cast<std::size_t>(std::lround(static_cast<double>(dim) * opt.mlp_ratio));
  fc1_ = Linear::make(init, dim, hidden);
  fc2_ = Linear::make(init, hidden, dim);
  auto sw = [&] {
    const ShiftedLayout sl = swin_shift_layout(grid);
    return WindowPlan::make(sl.layout, grid, heads, sl.mask);
  };
  switch (kind) {
    case BlockKind::kW: plan_ = WindowPlan::make(partition_windows(grid), grid, heads); break;
    case BlockKind::kSW: plan_ = sw(); break;
    case BlockKind::kPSW:
      plan_ = WindowPlan::make(psw_layout(grid, opt.psw_fold), grid, heads);
      if (opt.swin_mode_uses_sw) sw_plan_ = sw();
      break;
    case BlockKind::kPA: pitch_ = PitchPlan::make(grid, heads); break;
  }
}

AttentionOutput TransformerBlock::attention(const Tensor& x, Mode mode) const {
  switch (kind_) {
    case BlockKind::kW:
    case BlockKind::kSW: return windowed_attention(x, attn_, *plan_, mode);
    case BlockKind::kPSW:
      if (mode == Mode::kSwin && sw_plan_) return windowed_attention(x, attn_, *sw_plan_, mode);
      return psw_msa(x, attn_, *plan_, mode);
    case BlockKind::kPA: return pitch_attention(x, attn_, *pitch_, mode, opt_.pa_value_from_key);
  }
  throw std::logic_error("unreachable block kind");
}

Tensor TransformerBlock::forward(const Tensor& x, Mode mode) const {
  const Tensor y = ops::add(x, attention(norm1_(x), mode).out);
  return ops::add(y, fc2_(ops::gelu(fc1_(norm2_(y)))));
}

void TransformerBlock::collect(const std::string& prefix, std::vector<Param>& out) const {
  norm1_.collect(prefix + ".norm1", out);
  attn_.collect(prefix + ".attn", out);
  norm2_.collect(prefix + ".norm2", out);
  fc1_.collect(prefix + ".mlp.fc1", out);
  fc2_.collect(prefix + ".mlp.fc2", out);
}

}  // namespace panoswin
