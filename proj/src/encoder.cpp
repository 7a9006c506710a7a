#include "edt/encoder.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

namespace edt {

namespace {

constexpr double kLnEps = 1e-8;

double gauss(uint64_t& rng) {
  double u1 = splitmix_unit(rng);
  double u2 = splitmix_unit(rng);
  if (u1 < 1e-15) u1 = 1e-15;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

Mat gauss_mat(int rows, int cols, uint64_t& rng, double scale) {
  Mat m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = gauss(rng) * scale;
  return m;
}

Mat dropout_mask(int rows, int cols, double rate, uint64_t& rng) {
  const double keep = 1.0 - rate;
  Mat m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r)
      m(r, c) = splitmix_unit(rng) < rate ? 0.0 : 1.0 / keep;
  return m;
}

Mat layer_norm(const Mat& x, const Vec& gamma, const Vec& beta,
               LayerNormCache* cache) {
  const auto d = x.rows();
  const auto t = x.cols();
  Mat out(d, t);
  Mat xhat(d, t);
  Vec sigma(t);
  for (Eigen::Index c = 0; c < t; ++c) {
    const double mu = x.col(c).mean();
    const Vec centered = x.col(c).array() - mu;
    const double var = centered.squaredNorm() / static_cast<double>(d);
    const double sd = std::sqrt(var + kLnEps);
    xhat.col(c) = centered / sd;
    sigma(c) = sd;
    out.col(c) =
        (gamma.array() * xhat.col(c).array()).matrix() + beta;
  }
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->sigma = std::move(sigma);
  }
  return out;
}

Mat layer_norm_backward(const Mat& dy, const LayerNormCache& c,
                        const Vec& gamma, Vec& dgamma, Vec& dbeta) {
  const auto d = dy.rows();
  const auto t = dy.cols();
  dgamma += (dy.array() * c.xhat.array()).rowwise().sum().matrix();
  dbeta += dy.rowwise().sum();
  Mat dx(d, t);
  for (Eigen::Index col = 0; col < t; ++col) {
    const Vec g = (dy.col(col).array() * gamma.array()).matrix();
    const double m1 = g.mean();
    const double m2 = (g.array() * c.xhat.col(col).array()).mean();
    dx.col(col) =
        (g.array() - m1 - c.xhat.col(col).array() * m2).matrix() /
        c.sigma(col);
  }
  return dx;
}

void check_adapter_shapes(const AdapterParams& p) {
  if (p.b_down.size() != p.w_down.rows() || p.w_up.cols() != p.w_down.rows() ||
      p.b_up.size() != p.w_up.rows()) {
    throw UsageError("adapter parameter shapes inconsistent");
  }
}

void write_f32_le(std::ofstream& out, const double* data, size_t n) {
  std::vector<unsigned char> buf(n * 4);
  for (size_t i = 0; i < n; ++i) {
    const auto bits = std::bit_cast<uint32_t>(static_cast<float>(data[i]));
    buf[i * 4 + 0] = static_cast<unsigned char>(bits & 0xff);
    buf[i * 4 + 1] = static_cast<unsigned char>((bits >> 8) & 0xff);
    buf[i * 4 + 2] = static_cast<unsigned char>((bits >> 16) & 0xff);
    buf[i * 4 + 3] = static_cast<unsigned char>((bits >> 24) & 0xff);
  }
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
}

void read_f32_le(std::ifstream& in, double* data, size_t n) {
  std::vector<unsigned char> buf(n * 4);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (static_cast<size_t>(in.gcount()) != buf.size())
    throw DataError("checkpoint tensor file truncated");
  for (size_t i = 0; i < n; ++i) {
    const uint32_t bits = static_cast<uint32_t>(buf[i * 4 + 0]) |
                          (static_cast<uint32_t>(buf[i * 4 + 1]) << 8) |
                          (static_cast<uint32_t>(buf[i * 4 + 2]) << 16) |
                          (static_cast<uint32_t>(buf[i * 4 + 3]) << 24);
    data[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
}

}  // namespace

AdapterParams zero_adapter(int d_in, int d_hidden, int d_out) {
  AdapterParams p;
  p.w_down = Mat::Zero(d_hidden, d_in);
  p.b_down = Vec::Zero(d_hidden);
  p.w_up = Mat::Zero(d_out, d_hidden);
  p.b_up = Vec::Zero(d_out);
  return p;
}

AdapterParams init_adapter(int d_in, int d_hidden, int d_out, uint64_t& rng,
                           double scale) {
  AdapterParams p = zero_adapter(d_in, d_hidden, d_out);
  p.w_down = gauss_mat(d_hidden, d_in, rng, scale);
  p.w_up = gauss_mat(d_out, d_hidden, rng, scale);
  return p;
}

AdapterParams init_domain_adapter(int d, int d_hidden, uint64_t& rng) {
  AdapterParams p = zero_adapter(d, d_hidden, d);
  p.w_down = gauss_mat(d_hidden, d, rng, 0.02);
  return p;
}

Vec adapt(const Vec& e, const AdapterParams& p) {
  check_adapter_shapes(p);
  if (e.size() != p.w_down.cols())
    throw UsageError("adapter input dimension mismatch: got " +
                     std::to_string(e.size()) + ", expected " +
                     std::to_string(p.w_down.cols()));
  return p.w_up * (p.w_down * e + p.b_down) + p.b_up;
}

Mat adapt_cols(const Mat& e, const AdapterParams& p) {
  check_adapter_shapes(p);
  if (e.rows() != p.w_down.cols())
    throw UsageError("adapter input dimension mismatch");
  Mat h = (p.w_down * e).colwise() + p.b_down;
  return (p.w_up * h).colwise() + p.b_up;
}

void adapt_cols_backward(const Mat& e, const AdapterParams& p, const Mat& dy,
                         AdapterParams& grads, Mat* de) {
  const Mat h = (p.w_down * e).colwise() + p.b_down;
  grads.w_up += dy * h.transpose();
  grads.b_up += dy.rowwise().sum();
  const Mat dh = p.w_up.transpose() * dy;
  grads.w_down += dh * e.transpose();
  grads.b_down += dh.rowwise().sum();
  if (de != nullptr) *de = p.w_down.transpose() * dh;
}

BackboneParams init_backbone(const BackboneConfig& cfg, uint64_t seed) {
  if (cfg.d <= 0 || cfg.layers <= 0 || cfg.heads <= 0 || cfg.max_len <= 0)
    throw UsageError("backbone dimensions must be positive");
  if (cfg.d % cfg.heads != 0)
    throw UsageError("hidden size must divide evenly into heads");
  uint64_t rng = seed ^ 0x6261636b626f6eULL;
  BackboneParams p;
  p.cfg = cfg;
  p.pos = gauss_mat(cfg.d, cfg.max_len, rng, 0.02);
  p.layers.resize(static_cast<size_t>(cfg.layers));
  for (auto& l : p.layers) {
    l.wq = gauss_mat(cfg.d, cfg.d, rng, 0.02);
    l.bq = Vec::Zero(cfg.d);
    l.wk = gauss_mat(cfg.d, cfg.d, rng, 0.02);
    l.bk = Vec::Zero(cfg.d);
    l.wv = gauss_mat(cfg.d, cfg.d, rng, 0.02);
    l.bv = Vec::Zero(cfg.d);
    l.wo = gauss_mat(cfg.d, cfg.d, rng, 0.02);
    l.bo = Vec::Zero(cfg.d);
    l.ln1_gamma = Vec::Ones(cfg.d);
    l.ln1_beta = Vec::Zero(cfg.d);
    l.w1 = gauss_mat(cfg.d, cfg.d, rng, 0.02);
    l.b1 = Vec::Zero(cfg.d);
    l.w2 = gauss_mat(cfg.d, cfg.d, rng, 0.02);
    l.b2 = Vec::Zero(cfg.d);
    l.ln2_gamma = Vec::Ones(cfg.d);
    l.ln2_beta = Vec::Zero(cfg.d);
  }
  p.lnf_gamma = Vec::Ones(cfg.d);
  p.lnf_beta = Vec::Zero(cfg.d);
  return p;
}

BackboneParams zeros_like(const BackboneParams& src) {
  BackboneParams p;
  p.cfg = src.cfg;
  p.frozen = src.frozen;
  p.pos = Mat::Zero(src.pos.rows(), src.pos.cols());
  p.layers.resize(src.layers.size());
  for (size_t i = 0; i < src.layers.size(); ++i) {
    const auto& s = src.layers[i];
    auto& l = p.layers[i];
    l.wq = Mat::Zero(s.wq.rows(), s.wq.cols());
    l.bq = Vec::Zero(s.bq.size());
    l.wk = Mat::Zero(s.wk.rows(), s.wk.cols());
    l.bk = Vec::Zero(s.bk.size());
    l.wv = Mat::Zero(s.wv.rows(), s.wv.cols());
    l.bv = Vec::Zero(s.bv.size());
    l.wo = Mat::Zero(s.wo.rows(), s.wo.cols());
    l.bo = Vec::Zero(s.bo.size());
    l.ln1_gamma = Vec::Zero(s.ln1_gamma.size());
    l.ln1_beta = Vec::Zero(s.ln1_beta.size());
    l.w1 = Mat::Zero(s.w1.rows(), s.w1.cols());
    l.b1 = Vec::Zero(s.b1.size());
    l.w2 = Mat::Zero(s.w2.rows(), s.w2.cols());
    l.b2 = Vec::Zero(s.b2.size());
    l.ln2_gamma = Vec::Zero(s.ln2_gamma.size());
    l.ln2_beta = Vec::Zero(s.ln2_beta.size());
  }
  p.lnf_gamma = Vec::Zero(src.lnf_gamma.size());
  p.lnf_beta = Vec::Zero(src.lnf_beta.size());
  return p;
}

Mat backbone_forward(const Mat& x, const BackboneParams& p,
                     ForwardCache* cache, Dropout* drop) {
  const int d = p.cfg.d;
  const auto t = x.cols();
  if (x.rows() != d) throw UsageError("encoder input row dimension mismatch");
  if (t < 1) throw UsageError("cannot encode an empty sequence");
  if (t > p.cfg.max_len)
    throw UsageError("sequence longer than max_len; truncate before encoding");
  const int heads = p.cfg.heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool training = drop != nullptr && drop->enabled();

  Mat cur = x + p.pos.leftCols(t);
  if (training) {
    Mat mask = dropout_mask(d, static_cast<int>(t), drop->rate, drop->rng);
    cur = cur.cwiseProduct(mask);
    if (cache != nullptr) cache->input_mask = std::move(mask);
  }
  if (cache != nullptr) {
    cache->x0 = cur;
    cache->layers.assign(p.layers.size(), LayerCache{});
  }

  for (size_t li = 0; li < p.layers.size(); ++li) {
    const auto& l = p.layers[li];
    LayerCache* lc = cache != nullptr ? &cache->layers[li] : nullptr;
    if (lc != nullptr) lc->x = cur;

    Mat a_in = layer_norm(cur, l.ln1_gamma, l.ln1_beta,
                          lc != nullptr ? &lc->ln1 : nullptr);
    Mat q = (l.wq * a_in).colwise() + l.bq;
    Mat k = (l.wk * a_in).colwise() + l.bk;
    Mat v = (l.wv * a_in).colwise() + l.bv;

    Mat concat(d, t);
    std::vector<Mat> probs;
    if (lc != nullptr) probs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      const auto qh = q.middleRows(h * dh, dh);
      const auto kh = k.middleRows(h * dh, dh);
      const auto vh = v.middleRows(h * dh, dh);
      Mat s = (qh.transpose() * kh) * scale;
      Mat prob = Mat::Zero(t, t);
      for (Eigen::Index i = 0; i < t; ++i) {
        double mx = s(i, 0);
        for (Eigen::Index j = 1; j <= i; ++j) mx = std::max(mx, s(i, j));
        double sum = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          prob(i, j) = std::exp(s(i, j) - mx);
          sum += prob(i, j);
        }
        for (Eigen::Index j = 0; j <= i; ++j) prob(i, j) /= sum;
      }
      concat.middleRows(h * dh, dh) = vh * prob.transpose();
      if (lc != nullptr) probs.push_back(std::move(prob));
    }
    Mat attn = (l.wo * concat).colwise() + l.bo;
    if (training) {
      Mat mask = dropout_mask(d, static_cast<int>(t), drop->rate, drop->rng);
      attn = attn.cwiseProduct(mask);
      if (lc != nullptr) lc->attn_mask = std::move(mask);
    }
    Mat x1 = cur + attn;

    Mat f_in = layer_norm(x1, l.ln2_gamma, l.ln2_beta,
                          lc != nullptr ? &lc->ln2 : nullptr);
    Mat h1 = ((l.w1 * f_in).colwise() + l.b1).cwiseMax(0.0);
    Mat f = (l.w2 * h1).colwise() + l.b2;
    if (training) {
      Mat mask = dropout_mask(d, static_cast<int>(t), drop->rate, drop->rng);
      f = f.cwiseProduct(mask);
      if (lc != nullptr) lc->ffn_mask = std::move(mask);
    }
    if (lc != nullptr) {
      lc->a_in = std::move(a_in);
      lc->q = std::move(q);
      lc->k = std::move(k);
      lc->v = std::move(v);
      lc->probs = std::move(probs);
      lc->concat = std::move(concat);
      lc->x1 = x1;
      lc->f_in = std::move(f_in);
      lc->h1 = std::move(h1);
    }
    cur = x1 + f;
  }

  if (cache != nullptr) cache->x_last = cur;
  return layer_norm(cur, p.lnf_gamma, p.lnf_beta,
                    cache != nullptr ? &cache->lnf : nullptr);
}

Mat backbone_backward(const Mat& dh, const BackboneParams& p,
                      const ForwardCache& cache, BackboneParams& grads) {
  const int d = p.cfg.d;
  const auto t = dh.cols();
  const int heads = p.cfg.heads;
  const int hd = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Mat dx = layer_norm_backward(dh, cache.lnf, p.lnf_gamma, grads.lnf_gamma,
                               grads.lnf_beta);

  for (size_t li = p.layers.size(); li-- > 0;) {
    const auto& l = p.layers[li];
    const auto& lc = cache.layers[li];
    auto& lg = grads.layers[li];

    // x2 = x1 + drop(ffn(f_in))
    Mat df = lc.ffn_mask.size() > 0 ? dx.cwiseProduct(lc.ffn_mask).eval() : dx;
    Mat dx1 = dx;

    lg.w2 += df * lc.h1.transpose();
    lg.b2 += df.rowwise().sum();
    Mat dh1 = l.w2.transpose() * df;
    Mat dz = (lc.h1.array() > 0.0).select(dh1, 0.0);
    lg.w1 += dz * lc.f_in.transpose();
    lg.b1 += dz.rowwise().sum();
    Mat df_in = l.w1.transpose() * dz;
    dx1 += layer_norm_backward(df_in, lc.ln2, l.ln2_gamma, lg.ln2_gamma,
                               lg.ln2_beta);

    // x1 = x + drop(wo * concat + bo)
    Mat dattn =
        lc.attn_mask.size() > 0 ? dx1.cwiseProduct(lc.attn_mask).eval() : dx1;
    Mat dxl = dx1;

    lg.wo += dattn * lc.concat.transpose();
    lg.bo += dattn.rowwise().sum();
    Mat dconcat = l.wo.transpose() * dattn;

    Mat dq(d, t), dk(d, t), dv(d, t);
    for (int h = 0; h < heads; ++h) {
      const auto doh = dconcat.middleRows(h * hd, hd);
      const auto vh = lc.v.middleRows(h * hd, hd);
      const auto qh = lc.q.middleRows(h * hd, hd);
      const auto kh = lc.k.middleRows(h * hd, hd);
      const Mat& prob = lc.probs[static_cast<size_t>(h)];
      dv.middleRows(h * hd, hd) = doh * prob;
      Mat dprob = doh.transpose() * vh;
      const Vec row_dot = dprob.cwiseProduct(prob).rowwise().sum();
      Mat ds = prob.cwiseProduct((dprob.colwise() - row_dot).eval());
      dq.middleRows(h * hd, hd) = (kh * ds.transpose()) * scale;
      dk.middleRows(h * hd, hd) = (qh * ds) * scale;
    }
    lg.wq += dq * lc.a_in.transpose();
    lg.bq += dq.rowwise().sum();
    lg.wk += dk * lc.a_in.transpose();
    lg.bk += dk.rowwise().sum();
    lg.wv += dv * lc.a_in.transpose();
    lg.bv += dv.rowwise().sum();
    Mat da_in = l.wq.transpose() * dq + l.wk.transpose() * dk +
                l.wv.transpose() * dv;
    dx = dxl + layer_norm_backward(da_in, lc.ln1, l.ln1_gamma, lg.ln1_gamma,
                                   lg.ln1_beta);
  }

  if (cache.input_mask.size() > 0) dx = dx.cwiseProduct(cache.input_mask);
  grads.pos.leftCols(t) += dx;
  return dx;
}

Vec encode(const std::vector<Vec>& projected, const BackboneParams& p) {
  if (projected.empty()) throw UsageError("cannot encode an empty sequence");
  const size_t keep = std::min(projected.size(),
                               static_cast<size_t>(p.cfg.max_len));
  const size_t start = projected.size() - keep;
  Mat x(p.cfg.d, static_cast<Eigen::Index>(keep));
  for (size_t i = 0; i < keep; ++i) {
    const Vec& e = projected[start + i];
    if (e.size() != p.cfg.d)
      throw UsageError("projected item dimension mismatch");
    x.col(static_cast<Eigen::Index>(i)) = e;
  }
  Mat h = backbone_forward(x, p);
  return h.col(h.cols() - 1);
}

Vec domain_encode(const std::vector<Vec>& projected, const BackboneParams& p,
                  const AdapterParams& adapter, bool residual) {
  if (!p.frozen)
    throw UsageError("domain encoding requires a frozen backbone");
  Vec h = encode(projected, p);
  return residual ? Vec(h + adapt(h, adapter)) : adapt(h, adapter);
}

Vec domain_item(const Vec& item_proj, const AdapterParams& adapter,
                bool residual) {
  return residual ? Vec(item_proj + adapt(item_proj, adapter))
                  : adapt(item_proj, adapter);
}

double score_global(const Vec& item_proj, const Vec& u) {
  if (item_proj.size() != u.size())
    throw UsageError("score dimension mismatch");
  return item_proj.dot(u);
}

double score_combined(const Vec& item_global, const Vec& item_domain,
                      Domain item_domain_tag, const DomainThread& thread) {
  if (item_domain_tag != thread.domain)
    throw UsageError(std::string("item of domain ") +
                     domain_letter(item_domain_tag) +
                     " scored under thread " + domain_letter(thread.domain));
  const double global_term = score_global(item_global, thread.u_global);
  if (!thread.has_domain) return global_term;
  if (item_domain.size() != thread.u_domain.size())
    throw UsageError("score dimension mismatch");
  return item_domain.dot(thread.u_domain) + global_term;
}

ModelState make_model(const ModelCfg& cfg, uint64_t seed) {
  if (cfg.d_l <= 0 || cfg.d <= 0 || cfg.domain_hidden <= 0)
    throw UsageError("model dimensions must be positive");
  if (cfg.d_l % 2 != 0)
    throw UsageError("embedding width must be even for the half-width adapter");
  ModelState m;
  m.cfg = cfg;
  m.seed = seed;
  BackboneConfig bc;
  bc.d = cfg.d;
  bc.layers = cfg.layers;
  bc.heads = cfg.heads;
  bc.max_len = cfg.max_len;
  bc.dropout = cfg.dropout;
  m.backbone = init_backbone(bc, seed);
  uint64_t rng = seed ^ 0x61646170746572ULL;
  m.global_adapter = init_adapter(cfg.d_l, cfg.d_l / 2, cfg.d, rng);
  m.profile_adapter = init_adapter(cfg.d_l, cfg.d_l / 2, cfg.d, rng);
  m.domain_a = init_domain_adapter(cfg.d, cfg.domain_hidden, rng);
  m.domain_b = init_domain_adapter(cfg.d, cfg.domain_hidden, rng);
  return m;
}

ModelState zeros_like(const ModelState& src) {
  ModelState m;
  m.cfg = src.cfg;
  m.seed = src.seed;
  m.backbone = zeros_like(src.backbone);
  m.global_adapter = zero_adapter(src.global_adapter.d_in(),
                                  src.global_adapter.d_hidden(),
                                  src.global_adapter.d_out());
  m.profile_adapter = zero_adapter(src.profile_adapter.d_in(),
                                   src.profile_adapter.d_hidden(),
                                   src.profile_adapter.d_out());
  m.domain_a = zero_adapter(src.domain_a.d_in(), src.domain_a.d_hidden(),
                            src.domain_a.d_out());
  m.domain_b = zero_adapter(src.domain_b.d_in(), src.domain_b.d_hidden(),
                            src.domain_b.d_out());
  return m;
}

std::vector<ParamView> param_views(AdapterParams& p,
                                   const std::string& prefix) {
  return {
      {prefix + ".w_down", p.w_down.data(), static_cast<size_t>(p.w_down.size())},
      {prefix + ".b_down", p.b_down.data(), static_cast<size_t>(p.b_down.size())},
      {prefix + ".w_up", p.w_up.data(), static_cast<size_t>(p.w_up.size())},
      {prefix + ".b_up", p.b_up.data(), static_cast<size_t>(p.b_up.size())},
  };
}

std::vector<ParamView> param_views(BackboneParams& p) {
  std::vector<ParamView> views;
  views.push_back({"backbone.pos", p.pos.data(),
                   static_cast<size_t>(p.pos.size())});
  for (size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    const std::string pre = "backbone.layer" + std::to_string(i) + ".";
    auto add = [&](const char* name, double* data, Eigen::Index n) {
      views.push_back({pre + name, data, static_cast<size_t>(n)});
    };
    add("wq", l.wq.data(), l.wq.size());
    add("bq", l.bq.data(), l.bq.size());
    add("wk", l.wk.data(), l.wk.size());
    add("bk", l.bk.data(), l.bk.size());
    add("wv", l.wv.data(), l.wv.size());
    add("bv", l.bv.data(), l.bv.size());
    add("wo", l.wo.data(), l.wo.size());
    add("bo", l.bo.data(), l.bo.size());
    add("ln1_gamma", l.ln1_gamma.data(), l.ln1_gamma.size());
    add("ln1_beta", l.ln1_beta.data(), l.ln1_beta.size());
    add("w1", l.w1.data(), l.w1.size());
    add("b1", l.b1.data(), l.b1.size());
    add("w2", l.w2.data(), l.w2.size());
    add("b2", l.b2.data(), l.b2.size());
    add("ln2_gamma", l.ln2_gamma.data(), l.ln2_gamma.size());
    add("ln2_beta", l.ln2_beta.data(), l.ln2_beta.size());
  }
  views.push_back({"backbone.lnf_gamma", p.lnf_gamma.data(),
                   static_cast<size_t>(p.lnf_gamma.size())});
  views.push_back({"backbone.lnf_beta", p.lnf_beta.data(),
                   static_cast<size_t>(p.lnf_beta.size())});
  return views;
}

std::vector<ParamView> param_views(ModelState& m) {
  std::vector<ParamView> views = param_views(m.backbone);
  for (auto& v : param_views(m.global_adapter, "global_adapter"))
    views.push_back(v);
  for (auto& v : param_views(m.profile_adapter, "profile_adapter"))
    views.push_back(v);
  for (auto& v : param_views(m.domain_a, "domain_a")) views.push_back(v);
  for (auto& v : param_views(m.domain_b, "domain_b")) views.push_back(v);
  return views;
}

void save_checkpoint(const ModelState& m, const std::filesystem::path& dir,
                     const std::string& tag) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto& mut = const_cast<ModelState&>(m);
  const auto views = param_views(mut);

  nlohmann::ordered_json manifest;
  manifest["format"] = 1;
  manifest["tag"] = tag;
  manifest["seed"] = m.seed;
  manifest["config"] = {{"d_l", m.cfg.d_l},
                        {"d", m.cfg.d},
                        {"layers", m.cfg.layers},
                        {"heads", m.cfg.heads},
                        {"max_len", m.cfg.max_len},
                        {"dropout", m.cfg.dropout},
                        {"domain_hidden", m.cfg.domain_hidden},
                        {"residual_domain", m.cfg.residual_domain},
                        {"domain_item_adapter", m.cfg.domain_item_adapter}};
  manifest["backbone_frozen"] = m.backbone.frozen;
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  size_t offset = 0;
  for (const auto& v : views) {
    tensors.push_back({{"name", v.name}, {"count", v.size}, {"offset", offset}});
    offset += v.size;
  }
  manifest["tensors"] = tensors;

  std::ofstream mf(dir / (tag + ".json"));
  if (!mf) throw DataError("cannot write checkpoint manifest in " +
                           dir.string());
  mf << manifest.dump(2) << "\n";
  mf.close();

  std::ofstream bf(dir / (tag + ".bin"), std::ios::binary);
  if (!bf) throw DataError("cannot write checkpoint tensors in " +
                           dir.string());
  for (const auto& v : views) write_f32_le(bf, v.data, v.size);
}

ModelState load_checkpoint(const std::filesystem::path& dir,
                           const std::string& tag) {
  namespace fs = std::filesystem;
  const fs::path mpath = dir / (tag + ".json");
  std::ifstream mf(mpath);
  if (!mf)
    throw DataError("missing checkpoint " + mpath.string() +
                    "; run the training command first");
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint manifest " + mpath.string() + ": " +
                    e.what());
  }
  ModelCfg cfg;
  const auto& c = manifest.at("config");
  cfg.d_l = c.at("d_l").get<int>();
  cfg.d = c.at("d").get<int>();
  cfg.layers = c.at("layers").get<int>();
  cfg.heads = c.at("heads").get<int>();
  cfg.max_len = c.at("max_len").get<int>();
  cfg.dropout = c.at("dropout").get<double>();
  cfg.domain_hidden = c.at("domain_hidden").get<int>();
  cfg.residual_domain = c.at("residual_domain").get<bool>();
  cfg.domain_item_adapter = c.at("domain_item_adapter").get<bool>();

  ModelState m = make_model(cfg, manifest.at("seed").get<uint64_t>());
  m.backbone.frozen = manifest.at("backbone_frozen").get<bool>();

  const auto views = param_views(m);
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != views.size())
    throw DataError("checkpoint tensor count mismatch in " + mpath.string());

  std::ifstream bf(dir / (tag + ".bin"), std::ios::binary);
  if (!bf)
    throw DataError("missing checkpoint tensors " +
                    (dir / (tag + ".bin")).string());
  for (size_t i = 0; i < views.size(); ++i) {
    const auto& entry = tensors.at(i);
    if (entry.at("name").get<std::string>() != views[i].name ||
        entry.at("count").get<size_t>() != views[i].size)
      throw DataError("checkpoint tensor table mismatch at " + views[i].name);
    read_f32_le(bf, views[i].data, views[i].size);
  }
  return m;
}

}  // namespace edt
