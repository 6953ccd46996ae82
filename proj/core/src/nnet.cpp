#include "bodycomp/nnet.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>

#include "bodycomp/model_io.hpp"
#include "bodycomp/rng.hpp"

namespace bodycomp {

namespace {

constexpr const char* kBranchNames[5] = {"full_face", "quarter_UL",
                                         "quarter_UR", "quarter_LL",
                                         "quarter_LR"};

void check_finite(const Tensor& t, const std::string& layer) {
  if (!t.all_finite()) {
    throw std::runtime_error("non-finite values in layer " + layer);
  }
}

// ---------------------------------------------------------------------------
// Kernels. Images are CHW; conv is stride-1 zero-padded "same"; pooling is
// 2x2 stride 2 (trailing odd row/column dropped).

void conv2d_forward(const double* in, int cin, int h, int w,
                    const double* weight, const double* bias, int cout, int k,
                    double* out) {
  const int half = k / 2;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int co = 0; co < cout; ++co) {
    double* out_plane = out + co * plane;
    std::fill(out_plane, out_plane + plane, bias[co]);
    for (int ci = 0; ci < cin; ++ci) {
      const double* in_plane = in + ci * plane;
      const double* wt = weight + ((static_cast<std::size_t>(co) * cin + ci) * k) * k;
      for (int dy = 0; dy < k; ++dy) {
        const int oy = dy - half;
        const int y0 = std::max(0, -oy);
        const int y1 = std::min(h, h - oy);
        for (int dx = 0; dx < k; ++dx) {
          const int ox = dx - half;
          const int x0 = std::max(0, -ox);
          const int x1 = std::min(w, w - ox);
          const double wv = wt[dy * k + dx];
          if (wv == 0.0) continue;
          for (int y = y0; y < y1; ++y) {
            double* orow = out_plane + static_cast<std::size_t>(y) * w;
            const double* irow =
                in_plane + static_cast<std::size_t>(y + oy) * w + ox;
            for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x];
          }
        }
      }
    }
  }
}

void conv2d_backward(const double* in, int cin, int h, int w,
                     const double* weight, int cout, int k,
                     const double* gout, double* gin, double* gweight,
                     double* gbias) {
  const int half = k / 2;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int co = 0; co < cout; ++co) {
    const double* gout_plane = gout + co * plane;
    double gb = 0;
    for (std::size_t i = 0; i < plane; ++i) gb += gout_plane[i];
    gbias[co] += gb;
    for (int ci = 0; ci < cin; ++ci) {
      const double* in_plane = in + ci * plane;
      double* gin_plane = gin ? gin + ci * plane : nullptr;
      const double* wt = weight + ((static_cast<std::size_t>(co) * cin + ci) * k) * k;
      double* gwt = gweight + ((static_cast<std::size_t>(co) * cin + ci) * k) * k;
      for (int dy = 0; dy < k; ++dy) {
        const int oy = dy - half;
        const int y0 = std::max(0, -oy);
        const int y1 = std::min(h, h - oy);
        for (int dx = 0; dx < k; ++dx) {
          const int ox = dx - half;
          const int x0 = std::max(0, -ox);
          const int x1 = std::min(w, w - ox);
          const double wv = wt[dy * k + dx];
          double gw = 0;
          for (int y = y0; y < y1; ++y) {
            const double* grow = gout_plane + static_cast<std::size_t>(y) * w;
            const double* irow =
                in_plane + static_cast<std::size_t>(y + oy) * w + ox;
            double* girow =
                gin_plane ? gin_plane + static_cast<std::size_t>(y + oy) * w + ox
                          : nullptr;
            if (girow) {
              for (int x = x0; x < x1; ++x) {
                gw += grow[x] * irow[x];
                girow[x] += wv * grow[x];
              }
            } else {
              for (int x = x0; x < x1; ++x) gw += grow[x] * irow[x];
            }
          }
          gwt[dy * k + dx] += gw;
        }
      }
    }
  }
}

void relu_inplace(Tensor& t) {
  double* p = t.data();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!(p[i] > 0.0)) p[i] = 0.0;
  }
}

// Backward through relu using the post-activation values (out > 0 <=> in > 0;
// the subgradient at 0 is 0).
void relu_backward_inplace(const Tensor& post, Tensor& grad) {
  const double* a = post.data();
  double* g = grad.data();
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(a[i] > 0.0)) g[i] = 0.0;
  }
}

void maxpool2_forward(const double* in, int c, int h, int w, double* out,
                      int* argmax) {
  const int oh = h / 2;
  const int ow = w / 2;
  const std::size_t in_plane = static_cast<std::size_t>(h) * w;
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
  for (int ch = 0; ch < c; ++ch) {
    const double* ip = in + ch * in_plane;
    double* op = out + ch * out_plane;
    int* ap = argmax + ch * out_plane;
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double best = -std::numeric_limits<double>::infinity();
        int best_idx = 0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int idx = (2 * y + dy) * w + 2 * x + dx;
            if (ip[idx] > best) {
              best = ip[idx];
              best_idx = idx;
            }
          }
        }
        op[y * ow + x] = best;
        ap[y * ow + x] = best_idx;
      }
    }
  }
}

void maxpool2_backward(const double* gout, int c, int h, int w,
                       const int* argmax, double* gin) {
  const int oh = h / 2;
  const int ow = w / 2;
  const std::size_t in_plane = static_cast<std::size_t>(h) * w;
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
  for (int ch = 0; ch < c; ++ch) {
    const double* gp = gout + ch * out_plane;
    const int* ap = argmax + ch * out_plane;
    double* gi = gin + ch * in_plane;
    for (std::size_t i = 0; i < out_plane; ++i) gi[ap[i]] += gp[i];
  }
}

void gap_forward(const double* in, int c, int h, int w, double* out) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const double inv = 1.0 / static_cast<double>(plane);
  for (int ch = 0; ch < c; ++ch) {
    double s = 0;
    const double* p = in + ch * plane;
    for (std::size_t i = 0; i < plane; ++i) s += p[i];
    out[ch] = s * inv;
  }
}

void gap_backward(const double* gout, int c, int h, int w, double* gin) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const double inv = 1.0 / static_cast<double>(plane);
  for (int ch = 0; ch < c; ++ch) {
    const double g = gout[ch] * inv;
    double* p = gin + ch * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] += g;
  }
}

void dense_forward(const double* x, int in_dim, const double* weight,
                   const double* bias, int out_dim, double* y) {
  for (int o = 0; o < out_dim; ++o) {
    const double* row = weight + static_cast<std::size_t>(o) * in_dim;
    double s = bias[o];
    for (int i = 0; i < in_dim; ++i) s += row[i] * x[i];
    y[o] = s;
  }
}

void dense_backward(const double* x, int in_dim, const double* weight,
                    int out_dim, const double* gy, double* gx, double* gweight,
                    double* gbias) {
  for (int o = 0; o < out_dim; ++o) {
    const double g = gy[o];
    gbias[o] += g;
    const double* row = weight + static_cast<std::size_t>(o) * in_dim;
    double* grow = gweight + static_cast<std::size_t>(o) * in_dim;
    if (gx) {
      for (int i = 0; i < in_dim; ++i) {
        grow[i] += g * x[i];
        gx[i] += g * row[i];
      }
    } else {
      for (int i = 0; i < in_dim; ++i) grow[i] += g * x[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Parameter layout helpers. Registry order is: image branches (conv levels in
// order, weight then bias), structured branch, trunk, pbf head, smm head.

struct ParamLayout {
  int levels = 0;
  int n_struct = 0;
  int n_trunk = 0;

  explicit ParamLayout(const ArchitectureSpec& a)
      : levels(static_cast<int>(a.conv_channels.size())),
        n_struct(static_cast<int>(a.structured_widths.size())),
        n_trunk(static_cast<int>(a.trunk_widths.size())) {}

  int conv_w(int branch, int level) const { return branch * 2 * levels + 2 * level; }
  int conv_b(int branch, int level) const { return conv_w(branch, level) + 1; }
  int struct_w(int i) const { return 10 * levels + 2 * i; }
  int struct_b(int i) const { return struct_w(i) + 1; }
  int trunk_w(int i) const { return 10 * levels + 2 * n_struct + 2 * i; }
  int trunk_b(int i) const { return trunk_w(i) + 1; }
  // task 0 = pbf, task 1 = smm; each head has hidden w/b then out w/b.
  int head_base(int task) const {
    return 10 * levels + 2 * n_struct + 2 * n_trunk + 4 * task;
  }
  int total() const { return 10 * levels + 2 * n_struct + 2 * n_trunk + 8; }
};

// Spatial side at each conv level (pooling halves between levels).
std::vector<int> level_sides(const ArchitectureSpec& a) {
  std::vector<int> sides;
  int s = a.image_side;
  for (std::size_t l = 0; l < a.conv_channels.size(); ++l) {
    sides.push_back(s);
    if (l + 1 < a.conv_channels.size()) s /= 2;
  }
  return sides;
}

// ---------------------------------------------------------------------------
// Per-sample tensors and forward/backward context.

struct SampleTensors {
  std::array<Tensor, 5> images;  // [1, S, S] scaled to [0, 1]
  Tensor structured;
  double pbf = 0;
  double smm = 0;
};

Tensor image_to_tensor(const Image& img, int expected_side,
                       const std::string& branch) {
  if (img.channels != 1 || img.width != expected_side ||
      img.height != expected_side) {
    throw std::runtime_error(
        "branch " + branch + ": expected grayscale " +
        std::to_string(expected_side) + "x" + std::to_string(expected_side) +
        " image, got " + std::to_string(img.width) + "x" +
        std::to_string(img.height) + "x" + std::to_string(img.channels));
  }
  Tensor t({1, static_cast<std::size_t>(expected_side),
            static_cast<std::size_t>(expected_side)});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    t[i] = img.pixels[i] / 255.0;
  }
  return t;
}

SampleTensors tensorize(const PreprocessedSample& s,
                        const ArchitectureSpec& arch) {
  SampleTensors t;
  t.images[0] = image_to_tensor(s.full_face, arch.image_side, kBranchNames[0]);
  for (int q = 0; q < 4; ++q) {
    t.images[q + 1] =
        image_to_tensor(s.quarters[q], arch.image_side, kBranchNames[q + 1]);
  }
  if (s.structured.size() != static_cast<std::size_t>(arch.structured_dim)) {
    throw std::runtime_error(
        "branch structured: expected vector of length " +
        std::to_string(arch.structured_dim) + ", got " +
        std::to_string(s.structured.size()));
  }
  t.structured = Tensor({s.structured.size()},
                        std::vector<double>(s.structured.begin(),
                                            s.structured.end()));
  t.pbf = s.pbf;
  t.smm = s.smm;
  return t;
}

struct BranchCtx {
  std::vector<Tensor> conv_out;        // post-relu, per level
  std::vector<Tensor> pool_out;        // per level except last
  std::vector<std::vector<int>> pool_arg;
  Tensor gap;  // [C_last]
  // gradient scratch, mirrors of the above
  std::vector<Tensor> g_conv_out;
  std::vector<Tensor> g_pool_out;
  Tensor g_gap;
};

struct Ctx {
  std::array<BranchCtx, 5> branches;
  std::vector<Tensor> struct_acts;  // output of each dense (post-relu except last)
  Tensor concat;
  std::vector<Tensor> trunk_acts;  // post-relu
  std::array<Tensor, 2> head_hidden;
  std::array<double, 2> head_z{0.0, 0.0};
  // gradient scratch
  std::vector<Tensor> g_struct_acts;
  Tensor g_concat;
  std::vector<Tensor> g_trunk_acts;
  std::array<Tensor, 2> g_head_hidden;
  Tensor g_struct_in;
};

Ctx make_ctx(const ArchitectureSpec& a) {
  Ctx ctx;
  const auto sides = level_sides(a);
  const int levels = static_cast<int>(a.conv_channels.size());
  for (auto& br : ctx.branches) {
    br.conv_out.resize(levels);
    br.g_conv_out.resize(levels);
    br.pool_out.resize(std::max(0, levels - 1));
    br.g_pool_out.resize(std::max(0, levels - 1));
    br.pool_arg.resize(std::max(0, levels - 1));
    for (int l = 0; l < levels; ++l) {
      const std::size_t c = static_cast<std::size_t>(a.conv_channels[l]);
      const std::size_t s = static_cast<std::size_t>(sides[l]);
      br.conv_out[l] = Tensor({c, s, s});
      br.g_conv_out[l] = Tensor({c, s, s});
      if (l + 1 < levels) {
        const std::size_t ps = s / 2;
        br.pool_out[l] = Tensor({c, ps, ps});
        br.g_pool_out[l] = Tensor({c, ps, ps});
        br.pool_arg[l].resize(c * ps * ps);
      }
    }
    br.gap = Tensor({static_cast<std::size_t>(a.conv_channels.back())});
    br.g_gap = Tensor({static_cast<std::size_t>(a.conv_channels.back())});
  }
  ctx.struct_acts.resize(a.structured_widths.size());
  ctx.g_struct_acts.resize(a.structured_widths.size());
  for (std::size_t i = 0; i < a.structured_widths.size(); ++i) {
    ctx.struct_acts[i] = Tensor({static_cast<std::size_t>(a.structured_widths[i])});
    ctx.g_struct_acts[i] = Tensor({static_cast<std::size_t>(a.structured_widths[i])});
  }
  ctx.g_struct_in = Tensor({static_cast<std::size_t>(a.structured_dim)});
  ctx.concat = Tensor({static_cast<std::size_t>(a.concat_dim())});
  ctx.g_concat = Tensor({static_cast<std::size_t>(a.concat_dim())});
  ctx.trunk_acts.resize(a.trunk_widths.size());
  ctx.g_trunk_acts.resize(a.trunk_widths.size());
  for (std::size_t i = 0; i < a.trunk_widths.size(); ++i) {
    ctx.trunk_acts[i] = Tensor({static_cast<std::size_t>(a.trunk_widths[i])});
    ctx.g_trunk_acts[i] = Tensor({static_cast<std::size_t>(a.trunk_widths[i])});
  }
  for (int t = 0; t < 2; ++t) {
    ctx.head_hidden[t] = Tensor({static_cast<std::size_t>(a.head_hidden)});
    ctx.g_head_hidden[t] = Tensor({static_cast<std::size_t>(a.head_hidden)});
  }
  return ctx;
}

// Standardized head outputs land in ctx.head_z.
void forward_ctx(const NetworkModel& m, const SampleTensors& in, Ctx& ctx) {
  const ArchitectureSpec& a = m.arch;
  const ParamLayout lay(a);
  const auto sides = level_sides(a);
  const int levels = static_cast<int>(a.conv_channels.size());

  for (int b = 0; b < 5; ++b) {
    BranchCtx& br = ctx.branches[b];
    const Tensor* cur = &in.images[b];
    int cin = 1;
    for (int l = 0; l < levels; ++l) {
      const int cout = a.conv_channels[l];
      const int s = sides[l];
      conv2d_forward(cur->data(), cin, s, s,
                     m.params[lay.conv_w(b, l)].data(),
                     m.params[lay.conv_b(b, l)].data(), cout, a.conv_kernel,
                     br.conv_out[l].data());
      check_finite(br.conv_out[l], std::string(kBranchNames[b]) + ".conv" +
                                       std::to_string(l));
      relu_inplace(br.conv_out[l]);
      if (l + 1 < levels) {
        maxpool2_forward(br.conv_out[l].data(), cout, s, s,
                         br.pool_out[l].data(), br.pool_arg[l].data());
        cur = &br.pool_out[l];
      } else {
        gap_forward(br.conv_out[l].data(), cout, s, s, br.gap.data());
      }
      cin = cout;
    }
  }

  // Structured branch: dense->relu between layers, final layer linear.
  {
    const Tensor* cur = &in.structured;
    int in_dim = a.structured_dim;
    for (int i = 0; i < lay.n_struct; ++i) {
      const int out_dim = a.structured_widths[i];
      dense_forward(cur->data(), in_dim, m.params[lay.struct_w(i)].data(),
                    m.params[lay.struct_b(i)].data(), out_dim,
                    ctx.struct_acts[i].data());
      check_finite(ctx.struct_acts[i], "structured.dense" + std::to_string(i));
      if (i + 1 < lay.n_struct) relu_inplace(ctx.struct_acts[i]);
      cur = &ctx.struct_acts[i];
      in_dim = out_dim;
    }
  }

  // Concatenate the six embeddings.
  {
    double* out = ctx.concat.data();
    for (int b = 0; b < 5; ++b) {
      const Tensor& g = ctx.branches[b].gap;
      std::copy(g.data(), g.data() + g.size(), out);
      out += g.size();
    }
    const Tensor& s = ctx.struct_acts.back();
    std::copy(s.data(), s.data() + s.size(), out);
  }

  // Shared trunk, relu after every layer.
  {
    const Tensor* cur = &ctx.concat;
    int in_dim = a.concat_dim();
    for (int i = 0; i < lay.n_trunk; ++i) {
      const int out_dim = a.trunk_widths[i];
      dense_forward(cur->data(), in_dim, m.params[lay.trunk_w(i)].data(),
                    m.params[lay.trunk_b(i)].data(), out_dim,
                    ctx.trunk_acts[i].data());
      check_finite(ctx.trunk_acts[i], "trunk.dense" + std::to_string(i));
      relu_inplace(ctx.trunk_acts[i]);
      cur = &ctx.trunk_acts[i];
      in_dim = out_dim;
    }
  }

  // Task heads.
  const Tensor& trunk_out = ctx.trunk_acts.back();
  for (int t = 0; t < 2; ++t) {
    const int base = lay.head_base(t);
    dense_forward(trunk_out.data(), a.trunk_widths.back(),
                  m.params[base].data(), m.params[base + 1].data(),
                  a.head_hidden, ctx.head_hidden[t].data());
    check_finite(ctx.head_hidden[t],
                 std::string(t == 0 ? "head_pbf" : "head_smm") + ".hidden");
    relu_inplace(ctx.head_hidden[t]);
    double z = 0;
    dense_forward(ctx.head_hidden[t].data(), a.head_hidden,
                  m.params[base + 2].data(), m.params[base + 3].data(), 1, &z);
    if (!std::isfinite(z)) {
      throw std::runtime_error(std::string("non-finite values in layer ") +
                               (t == 0 ? "head_pbf" : "head_smm") + ".out");
    }
    ctx.head_z[t] = z;
  }
}

// Accumulates gradients of (gz_pbf, gz_smm) . head_z into grads (registry
// order); ctx must hold a fresh forward pass for the same input.
void backward_ctx(const NetworkModel& m, const SampleTensors& in, Ctx& ctx,
                  double gz_pbf, double gz_smm, std::vector<Tensor>& grads) {
  const ArchitectureSpec& a = m.arch;
  const ParamLayout lay(a);
  const auto sides = level_sides(a);
  const int levels = static_cast<int>(a.conv_channels.size());

  for (auto& t : ctx.g_trunk_acts) t.fill(0.0);
  ctx.g_concat.fill(0.0);

  // Heads.
  const Tensor& trunk_out = ctx.trunk_acts.back();
  Tensor& g_trunk_out = ctx.g_trunk_acts.back();
  const std::array<double, 2> gz{gz_pbf, gz_smm};
  for (int t = 0; t < 2; ++t) {
    if (gz[t] == 0.0) continue;
    const int base = lay.head_base(t);
    ctx.g_head_hidden[t].fill(0.0);
    dense_backward(ctx.head_hidden[t].data(), a.head_hidden,
                   m.params[base + 2].data(), 1, &gz[t],
                   ctx.g_head_hidden[t].data(), grads[base + 2].data(),
                   grads[base + 3].data());
    relu_backward_inplace(ctx.head_hidden[t], ctx.g_head_hidden[t]);
    dense_backward(trunk_out.data(), a.trunk_widths.back(),
                   m.params[base].data(), a.head_hidden,
                   ctx.g_head_hidden[t].data(), g_trunk_out.data(),
                   grads[base].data(), grads[base + 1].data());
  }

  // Trunk (reverse).
  for (int i = lay.n_trunk - 1; i >= 0; --i) {
    relu_backward_inplace(ctx.trunk_acts[i], ctx.g_trunk_acts[i]);
    const Tensor& input = i == 0 ? ctx.concat : ctx.trunk_acts[i - 1];
    double* g_input = i == 0 ? ctx.g_concat.data() : ctx.g_trunk_acts[i - 1].data();
    const int in_dim = i == 0 ? a.concat_dim() : a.trunk_widths[i - 1];
    dense_backward(input.data(), in_dim, m.params[lay.trunk_w(i)].data(),
                   a.trunk_widths[i], ctx.g_trunk_acts[i].data(), g_input,
                   grads[lay.trunk_w(i)].data(), grads[lay.trunk_b(i)].data());
  }

  // Split concat gradient back to branches.
  {
    const double* g = ctx.g_concat.data();
    for (int b = 0; b < 5; ++b) {
      Tensor& gg = ctx.branches[b].g_gap;
      std::copy(g, g + gg.size(), gg.data());
      g += gg.size();
    }
    Tensor& gs = ctx.g_struct_acts.back();
    std::copy(g, g + gs.size(), gs.data());
  }

  // Structured branch (reverse; relu between layers only).
  for (int i = lay.n_struct - 1; i >= 0; --i) {
    if (i + 1 < lay.n_struct) {
      relu_backward_inplace(ctx.struct_acts[i], ctx.g_struct_acts[i]);
    }
    const Tensor& input = i == 0 ? in.structured : ctx.struct_acts[i - 1];
    double* g_input = nullptr;
    if (i > 0) {
      ctx.g_struct_acts[i - 1].fill(0.0);
      g_input = ctx.g_struct_acts[i - 1].data();
    }
    const int in_dim = i == 0 ? a.structured_dim : a.structured_widths[i - 1];
    dense_backward(input.data(), in_dim, m.params[lay.struct_w(i)].data(),
                   a.structured_widths[i], ctx.g_struct_acts[i].data(), g_input,
                   grads[lay.struct_w(i)].data(), grads[lay.struct_b(i)].data());
  }

  // Image branches (reverse through gap/pool/conv chain).
  for (int b = 0; b < 5; ++b) {
    BranchCtx& br = ctx.branches[b];
    for (int l = levels - 1; l >= 0; --l) {
      const int cout = a.conv_channels[l];
      const int s = sides[l];
      Tensor& g_out = br.g_conv_out[l];
      g_out.fill(0.0);
      if (l + 1 < levels) {
        maxpool2_backward(br.g_pool_out[l].data(), cout, s, s,
                          br.pool_arg[l].data(), g_out.data());
      } else {
        gap_backward(br.g_gap.data(), cout, s, s, g_out.data());
      }
      relu_backward_inplace(br.conv_out[l], g_out);

      const Tensor* input = nullptr;
      double* g_input = nullptr;
      int cin = 0;
      if (l == 0) {
        input = &in.images[b];
        cin = 1;
      } else {
        input = &br.pool_out[l - 1];
        br.g_pool_out[l - 1].fill(0.0);
        g_input = br.g_pool_out[l - 1].data();
        cin = a.conv_channels[l - 1];
      }
      conv2d_backward(input->data(), cin, s, s,
                      m.params[lay.conv_w(b, l)].data(), cout, a.conv_kernel,
                      g_out.data(), g_input, grads[lay.conv_w(b, l)].data(),
                      grads[lay.conv_b(b, l)].data());
    }
  }
}

double standardize_pbf(double v, const TargetStats& s) {
  return (v - s.pbf_mean) / s.pbf_sd;
}
double standardize_smm(double v, const TargetStats& s) {
  return (v - s.smm_mean) / s.smm_sd;
}

std::vector<Tensor> make_grad_buffers(const std::vector<ParamInfo>& registry) {
  std::vector<Tensor> grads;
  grads.reserve(registry.size());
  for (const auto& info : registry) grads.emplace_back(info.shape);
  return grads;
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. Exceptions from
// workers are rethrown on the caller thread.
template <typename Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t]() {
      try {
        for (int i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

void ArchitectureSpec::validate() const {
  if (image_side < 2) throw std::runtime_error("arch: image_side must be >= 2");
  if (conv_channels.empty()) {
    throw std::runtime_error("arch: conv_channels must be non-empty");
  }
  for (int c : conv_channels) {
    if (c < 1) throw std::runtime_error("arch: conv channels must be >= 1");
  }
  if (conv_kernel < 1 || conv_kernel % 2 == 0) {
    throw std::runtime_error("arch: conv_kernel must be odd and >= 1");
  }
  int s = image_side;
  for (std::size_t l = 0; l + 1 < conv_channels.size(); ++l) {
    if (s < 2) {
      throw std::runtime_error(
          "arch: image_side too small for the pooling chain");
    }
    s /= 2;
  }
  if (s < 1) throw std::runtime_error("arch: pooled side collapsed to zero");
  if (structured_widths.empty()) {
    throw std::runtime_error("arch: structured_widths must be non-empty");
  }
  for (int w : structured_widths) {
    if (w < 1) throw std::runtime_error("arch: structured widths must be >= 1");
  }
  if (trunk_widths.empty()) {
    throw std::runtime_error("arch: trunk_widths must be non-empty");
  }
  for (int w : trunk_widths) {
    if (w < 1) throw std::runtime_error("arch: trunk widths must be >= 1");
  }
  if (head_hidden < 1) throw std::runtime_error("arch: head_hidden must be >= 1");
  if (structured_dim < 1) {
    throw std::runtime_error("arch: structured_dim must be >= 1");
  }
}

std::vector<ParamInfo> parameter_registry(const ArchitectureSpec& arch) {
  arch.validate();
  std::vector<ParamInfo> registry;
  const auto add = [&](std::string name, std::vector<std::size_t> shape) {
    ParamInfo info;
    info.name = std::move(name);
    info.size = shape_size(shape);
    info.shape = std::move(shape);
    registry.push_back(std::move(info));
  };
  const std::size_t k = static_cast<std::size_t>(arch.conv_kernel);
  for (int b = 0; b < 5; ++b) {
    std::size_t cin = 1;
    for (std::size_t l = 0; l < arch.conv_channels.size(); ++l) {
      const std::size_t cout = static_cast<std::size_t>(arch.conv_channels[l]);
      const std::string prefix =
          std::string(kBranchNames[b]) + ".conv" + std::to_string(l);
      add(prefix + ".weight", {cout, cin, k, k});
      add(prefix + ".bias", {cout});
      cin = cout;
    }
  }
  {
    std::size_t in_dim = static_cast<std::size_t>(arch.structured_dim);
    for (std::size_t i = 0; i < arch.structured_widths.size(); ++i) {
      const std::size_t out_dim = static_cast<std::size_t>(arch.structured_widths[i]);
      const std::string prefix = "structured.dense" + std::to_string(i);
      add(prefix + ".weight", {out_dim, in_dim});
      add(prefix + ".bias", {out_dim});
      in_dim = out_dim;
    }
  }
  {
    std::size_t in_dim = static_cast<std::size_t>(arch.concat_dim());
    for (std::size_t i = 0; i < arch.trunk_widths.size(); ++i) {
      const std::size_t out_dim = static_cast<std::size_t>(arch.trunk_widths[i]);
      const std::string prefix = "trunk.dense" + std::to_string(i);
      add(prefix + ".weight", {out_dim, in_dim});
      add(prefix + ".bias", {out_dim});
      in_dim = out_dim;
    }
  }
  for (const char* head : {"head_pbf", "head_smm"}) {
    add(std::string(head) + ".hidden.weight",
        {static_cast<std::size_t>(arch.head_hidden),
         static_cast<std::size_t>(arch.trunk_widths.back())});
    add(std::string(head) + ".hidden.bias",
        {static_cast<std::size_t>(arch.head_hidden)});
    add(std::string(head) + ".out.weight",
        {1, static_cast<std::size_t>(arch.head_hidden)});
    add(std::string(head) + ".out.bias", {1});
  }
  return registry;
}

NetworkModel init_model(const ArchitectureSpec& arch, std::uint64_t seed) {
  const auto registry = parameter_registry(arch);
  NetworkModel model;
  model.arch = arch;
  model.params.reserve(registry.size());
  Rng rng(seed);
  for (const auto& info : registry) {
    Tensor t(info.shape);
    const bool is_bias = info.shape.size() == 1;
    if (!is_bias) {
      // fan_in = product of all dims but the first (in_c*k*k or in_dim).
      std::size_t fan_in = 1;
      for (std::size_t d = 1; d < info.shape.size(); ++d) fan_in *= info.shape[d];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = rng.uniform(-bound, bound);
      }
    }
    model.params.push_back(std::move(t));
  }
  return model;
}

Prediction forward(const NetworkModel& model, const PreprocessedSample& sample) {
  model.arch.validate();
  const SampleTensors in = tensorize(sample, model.arch);
  Ctx ctx = make_ctx(model.arch);
  forward_ctx(model, in, ctx);
  return {ctx.head_z[0] * model.target_stats.pbf_sd + model.target_stats.pbf_mean,
          ctx.head_z[1] * model.target_stats.smm_sd + model.target_stats.smm_mean};
}

double loss(const Prediction& pred, double pbf_target, double smm_target,
            const TaskWeights& weights, const TargetStats& stats) {
  const double ep = standardize_pbf(pred.pbf, stats) - standardize_pbf(pbf_target, stats);
  const double es = standardize_smm(pred.smm, stats) - standardize_smm(smm_target, stats);
  return weights.pbf * ep * ep + weights.smm * es * es;
}

double batch_loss(const NetworkModel& model,
                  const std::vector<PreprocessedSample>& batch,
                  const TaskWeights& weights) {
  if (batch.empty()) throw std::runtime_error("batch_loss: empty batch");
  double total = 0;
  Ctx ctx = make_ctx(model.arch);
  for (const auto& sample : batch) {
    const SampleTensors in = tensorize(sample, model.arch);
    forward_ctx(model, in, ctx);
    const double ep = ctx.head_z[0] - standardize_pbf(sample.pbf, model.target_stats);
    const double es = ctx.head_z[1] - standardize_smm(sample.smm, model.target_stats);
    total += weights.pbf * ep * ep + weights.smm * es * es;
  }
  return total / static_cast<double>(batch.size());
}

std::vector<Tensor> backward(const NetworkModel& model,
                             const std::vector<PreprocessedSample>& batch,
                             const TaskWeights& weights) {
  if (batch.empty()) throw std::runtime_error("backward: empty batch");
  const auto registry = parameter_registry(model.arch);
  std::vector<Tensor> grads = make_grad_buffers(registry);
  Ctx ctx = make_ctx(model.arch);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const auto& sample : batch) {
    const SampleTensors in = tensorize(sample, model.arch);
    forward_ctx(model, in, ctx);
    const double ep = ctx.head_z[0] - standardize_pbf(sample.pbf, model.target_stats);
    const double es = ctx.head_z[1] - standardize_smm(sample.smm, model.target_stats);
    backward_ctx(model, in, ctx, 2.0 * weights.pbf * ep * inv_n,
                 2.0 * weights.smm * es * inv_n, grads);
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].all_finite()) {
      throw std::runtime_error("non-finite gradient for parameter " +
                               registry[i].name);
    }
  }
  return grads;
}

TrainResult train(NetworkModel model, const std::vector<SampleSource>& train_set,
                  const std::vector<SampleSource>& val_set,
                  const TrainConfig& cfg) {
  model.arch.validate();
  if (train_set.empty() || val_set.empty()) {
    throw std::runtime_error("train: training and validation sets must be non-empty");
  }
  if (cfg.batch_size < 1) throw std::runtime_error("train: batch_size must be >= 1");
  if (cfg.task_weights.pbf < 0 || cfg.task_weights.smm < 0 ||
      cfg.task_weights.pbf + cfg.task_weights.smm <= 0) {
    throw std::runtime_error("train: task weights must be >= 0 with positive sum");
  }

  // Target standardization from the training split.
  {
    double mp = 0, ms = 0;
    for (const auto& s : train_set) {
      mp += s.pbf;
      ms += s.smm;
    }
    mp /= static_cast<double>(train_set.size());
    ms /= static_cast<double>(train_set.size());
    double vp = 0, vs = 0;
    for (const auto& s : train_set) {
      vp += (s.pbf - mp) * (s.pbf - mp);
      vs += (s.smm - ms) * (s.smm - ms);
    }
    const double denom = std::max<std::size_t>(1, train_set.size() - 1);
    model.target_stats = {mp, std::sqrt(vp / denom), ms, std::sqrt(vs / denom)};
    if (!(model.target_stats.pbf_sd > 0) || !(model.target_stats.smm_sd > 0)) {
      throw std::runtime_error("train: targets have zero variance");
    }
  }

  const auto registry = parameter_registry(model.arch);
  const int n_threads = resolve_threads(cfg.threads);
  const int n_train = static_cast<int>(train_set.size());
  const int batch = std::min(cfg.batch_size, n_train);

  std::vector<PreprocessedSample> val_samples;
  val_samples.reserve(val_set.size());
  for (const auto& src : val_set) {
    val_samples.push_back(finalize_sample(src, model.norm_stats));
  }
  std::vector<PreprocessedSample> train_plain;
  if (!cfg.augment) {
    train_plain.reserve(train_set.size());
    for (const auto& src : train_set) {
      train_plain.push_back(finalize_sample(src, model.norm_stats));
    }
  }

  // Adam state.
  std::vector<Tensor> adam_m = make_grad_buffers(registry);
  std::vector<Tensor> adam_v = make_grad_buffers(registry);
  long adam_t = 0;

  // Per-slot scratch: gradients are accumulated per sample slot and reduced
  // in slot order, so results do not depend on the worker count.
  std::vector<std::vector<Tensor>> slot_grads(batch);
  for (auto& g : slot_grads) g = make_grad_buffers(registry);
  std::vector<double> slot_loss(batch, 0.0);
  std::vector<Ctx> worker_ctx(n_threads);
  for (auto& c : worker_ctx) c = make_ctx(model.arch);

  std::vector<Tensor> grads = make_grad_buffers(registry);
  std::vector<EpochStats> history;
  std::vector<Tensor> best_params = model.params;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;

  std::vector<int> order(n_train);
  for (int i = 0; i < n_train; ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng = Rng::substream(cfg.seed, static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);

    double epoch_loss_sum = 0;
    for (int start = 0; start < n_train; start += batch) {
      const int b = std::min(batch, n_train - start);
      parallel_for(b, n_threads, [&](int slot) {
        const int idx = order[start + slot];
        Ctx& ctx = worker_ctx[slot % n_threads];
        for (auto& g : slot_grads[slot]) g.fill(0.0);
        PreprocessedSample sample;
        if (cfg.augment) {
          Rng aug_rng = Rng::substream(cfg.seed, static_cast<std::uint64_t>(epoch),
                                       static_cast<std::uint64_t>(idx));
          sample = finalize_sample_augmented(train_set[idx], model.norm_stats,
                                             aug_rng, cfg.preprocess);
        } else {
          sample = train_plain[idx];
        }
        const SampleTensors in = tensorize(sample, model.arch);
        forward_ctx(model, in, ctx);
        const double ep = ctx.head_z[0] - standardize_pbf(sample.pbf, model.target_stats);
        const double es = ctx.head_z[1] - standardize_smm(sample.smm, model.target_stats);
        slot_loss[slot] = cfg.task_weights.pbf * ep * ep +
                          cfg.task_weights.smm * es * es;
        backward_ctx(model, in, ctx, 2.0 * cfg.task_weights.pbf * ep,
                     2.0 * cfg.task_weights.smm * es, slot_grads[slot]);
      });

      // Fixed-order reduction.
      const double inv_b = 1.0 / static_cast<double>(b);
      double batch_loss_value = 0;
      for (int slot = 0; slot < b; ++slot) batch_loss_value += slot_loss[slot];
      batch_loss_value *= inv_b;
      if (!std::isfinite(batch_loss_value)) {
        throw std::runtime_error(
            "train: non-finite loss at epoch " + std::to_string(epoch) +
            " batch " + std::to_string(start / batch));
      }
      for (std::size_t p = 0; p < grads.size(); ++p) {
        grads[p].fill(0.0);
        double* g = grads[p].data();
        for (int slot = 0; slot < b; ++slot) {
          const double* sg = slot_grads[slot][p].data();
          for (std::size_t i = 0; i < grads[p].size(); ++i) g[i] += sg[i];
        }
        for (std::size_t i = 0; i < grads[p].size(); ++i) g[i] *= inv_b;
      }

      // Adam step.
      ++adam_t;
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam_t));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam_t));
      for (std::size_t p = 0; p < model.params.size(); ++p) {
        double* w = model.params[p].data();
        double* m = adam_m[p].data();
        double* v = adam_v[p].data();
        const double* g = grads[p].data();
        for (std::size_t i = 0; i < model.params[p].size(); ++i) {
          m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
          v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
          const double mhat = m[i] / bc1;
          const double vhat = v[i] / bc2;
          w[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_epsilon);
        }
      }
      epoch_loss_sum += batch_loss_value * b;
    }

    // Validation pass.
    std::vector<std::array<double, 2>> val_z(val_samples.size());
    parallel_for(static_cast<int>(val_samples.size()), n_threads, [&](int i) {
      Ctx& ctx = worker_ctx[i % n_threads];
      const SampleTensors in = tensorize(val_samples[i], model.arch);
      forward_ctx(model, in, ctx);
      val_z[i] = {ctx.head_z[0], ctx.head_z[1]};
    });
    double val_loss_sum = 0, pbf_abs = 0, smm_abs = 0;
    for (std::size_t i = 0; i < val_samples.size(); ++i) {
      const double ep = val_z[i][0] - standardize_pbf(val_samples[i].pbf, model.target_stats);
      const double es = val_z[i][1] - standardize_smm(val_samples[i].smm, model.target_stats);
      val_loss_sum += cfg.task_weights.pbf * ep * ep + cfg.task_weights.smm * es * es;
      pbf_abs += std::fabs(ep * model.target_stats.pbf_sd);
      smm_abs += std::fabs(es * model.target_stats.smm_sd);
    }
    const double inv_val = 1.0 / static_cast<double>(val_samples.size());

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = epoch_loss_sum / static_cast<double>(n_train);
    stats.val_loss = val_loss_sum * inv_val;
    stats.val_pbf_mae = pbf_abs * inv_val;
    stats.val_smm_mae = smm_abs * inv_val;
    history.push_back(stats);

    if (stats.val_loss < best_val) {
      best_val = stats.val_loss;
      best_params = model.params;
      best_epoch = epoch;
    }
  }

  model.params = std::move(best_params);
  return {std::move(model), std::move(history), best_epoch};
}

std::vector<Prediction> predict_batch(
    const NetworkModel& model, const std::vector<PreprocessedSample>& samples,
    int threads) {
  model.arch.validate();
  std::vector<Prediction> out(samples.size());
  const int n_threads = resolve_threads(threads);
  std::vector<Ctx> worker_ctx(std::min<std::size_t>(n_threads, std::max<std::size_t>(1, samples.size())));
  for (auto& c : worker_ctx) c = make_ctx(model.arch);
  parallel_for(static_cast<int>(samples.size()), n_threads, [&](int i) {
    Ctx& ctx = worker_ctx[i % worker_ctx.size()];
    const SampleTensors in = tensorize(samples[i], model.arch);
    forward_ctx(model, in, ctx);
    out[i] = {ctx.head_z[0] * model.target_stats.pbf_sd + model.target_stats.pbf_mean,
              ctx.head_z[1] * model.target_stats.smm_sd + model.target_stats.smm_mean};
  });
  return out;
}

void save_model(const NetworkModel& model, const std::filesystem::path& path) {
  const auto registry = parameter_registry(model.arch);
  nlohmann::json manifest;
  manifest["format"] = "bodycomp-model";
  manifest["kind"] = "nnet";
  manifest["version"] = 1;
  manifest["architecture"] = {
      {"image_side", model.arch.image_side},
      {"conv_channels", model.arch.conv_channels},
      {"conv_kernel", model.arch.conv_kernel},
      {"structured_widths", model.arch.structured_widths},
      {"trunk_widths", model.arch.trunk_widths},
      {"head_hidden", model.arch.head_hidden},
      {"structured_dim", model.arch.structured_dim},
  };
  manifest["norm_stats"] = {
      {"height_mean", model.norm_stats.height_mean},
      {"height_sd", model.norm_stats.height_sd},
      {"age_mean", model.norm_stats.age_mean},
      {"age_sd", model.norm_stats.age_sd},
      {"weight_mean", model.norm_stats.weight_mean},
      {"weight_sd", model.norm_stats.weight_sd},
  };
  manifest["target_stats"] = {
      {"pbf_mean", model.target_stats.pbf_mean},
      {"pbf_sd", model.target_stats.pbf_sd},
      {"smm_mean", model.target_stats.smm_mean},
      {"smm_sd", model.target_stats.smm_sd},
  };
  nlohmann::json params = nlohmann::json::array();
  std::vector<double> blob;
  std::size_t total = 0;
  for (const auto& info : registry) total += info.size;
  blob.reserve(total);
  for (std::size_t i = 0; i < registry.size(); ++i) {
    params.push_back({{"name", registry[i].name}, {"shape", registry[i].shape}});
    const Tensor& t = model.params[i];
    blob.insert(blob.end(), t.data(), t.data() + t.size());
  }
  manifest["parameters"] = std::move(params);
  model_io::write_container(path, std::move(manifest), blob);
}

NetworkModel load_model(const std::filesystem::path& path) {
  const model_io::Container c = model_io::read_container(path);
  const auto& m = c.manifest;
  if (m.value("kind", "") != "nnet") {
    throw std::runtime_error("load_model: " + path.string() +
                             " is not a network model file");
  }
  NetworkModel model;
  const auto& a = m.at("architecture");
  model.arch.image_side = a.at("image_side").get<int>();
  model.arch.conv_channels = a.at("conv_channels").get<std::vector<int>>();
  model.arch.conv_kernel = a.at("conv_kernel").get<int>();
  model.arch.structured_widths = a.at("structured_widths").get<std::vector<int>>();
  model.arch.trunk_widths = a.at("trunk_widths").get<std::vector<int>>();
  model.arch.head_hidden = a.at("head_hidden").get<int>();
  model.arch.structured_dim = a.at("structured_dim").get<int>();

  const auto& ns = m.at("norm_stats");
  model.norm_stats.height_mean = ns.at("height_mean").get<double>();
  model.norm_stats.height_sd = ns.at("height_sd").get<double>();
  model.norm_stats.age_mean = ns.at("age_mean").get<double>();
  model.norm_stats.age_sd = ns.at("age_sd").get<double>();
  model.norm_stats.weight_mean = ns.at("weight_mean").get<double>();
  model.norm_stats.weight_sd = ns.at("weight_sd").get<double>();

  const auto& ts = m.at("target_stats");
  model.target_stats.pbf_mean = ts.at("pbf_mean").get<double>();
  model.target_stats.pbf_sd = ts.at("pbf_sd").get<double>();
  model.target_stats.smm_mean = ts.at("smm_mean").get<double>();
  model.target_stats.smm_sd = ts.at("smm_sd").get<double>();

  const auto registry = parameter_registry(model.arch);
  const auto& params = m.at("parameters");
  if (params.size() != registry.size()) {
    throw std::runtime_error("load_model: parameter count mismatch");
  }
  std::size_t offset = 0;
  for (std::size_t i = 0; i < registry.size(); ++i) {
    const auto& entry = params.at(i);
    if (entry.at("name").get<std::string>() != registry[i].name ||
        entry.at("shape").get<std::vector<std::size_t>>() != registry[i].shape) {
      throw std::runtime_error("load_model: parameter manifest mismatch at " +
                               registry[i].name);
    }
    if (offset + registry[i].size > c.blob.size()) {
      throw std::runtime_error("load_model: blob too short for parameters");
    }
    Tensor t(registry[i].shape,
             std::vector<double>(c.blob.begin() + offset,
                                 c.blob.begin() + offset + registry[i].size));
    model.params.push_back(std::move(t));
    offset += registry[i].size;
  }
  if (offset != c.blob.size()) {
    throw std::runtime_error("load_model: blob length mismatch");
  }
  return model;
}

}  // namespace bodycomp
