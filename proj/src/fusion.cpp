#include "groundcount/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <omp.h>

namespace groundcount::fusion {

using Eigen::Index;

namespace {

std::string shape(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void expect_shape(const char* name, const Matrix& m, Index rows, Index cols) {
    if (m.rows() != rows || m.cols() != cols)
        throw ShapeError(std::string(name) + " is " + shape(m) + ", expected " +
                         std::to_string(rows) + "x" + std::to_string(cols));
}

void expect_size(const char* name, const Vector& v, Index n) {
    if (v.size() != n)
        throw ShapeError(std::string(name) + " has " + std::to_string(v.size()) +
                         " entries, expected " + std::to_string(n));
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Vector tanh_of(const Vector& z) { return z.array().tanh().matrix(); }

struct FilmResult {
    Vector hidden, gamma, h;
};

FilmResult film_eval(const Vector& p, const Vector& c, const FusionParams& w) {
    const Index V = p.size();
    FilmResult r;
    r.hidden = tanh_of(w.film_w1 * c + w.film_b1);
    const Vector out = w.film_w2 * r.hidden + w.film_b2;
    r.gamma = out.head(V);
    r.h = r.gamma.cwiseProduct(p) + out.tail(V);
    return r;
}

Eigen::Vector2d softmax2(double s1, double s2) {
    const double m = std::max(s1, s2);
    const double e1 = std::exp(s1 - m), e2 = std::exp(s2 - m);
    return {e1 / (e1 + e2), e2 / (e1 + e2)};
}

struct GateResult {
    Vector hidden;
    double alpha = 0.5;
};

GateResult gate_eval(const Vector& p, const Vector& c, const FusionParams& w) {
    Vector x(p.size() + c.size());
    x << p, c;
    GateResult r;
    r.hidden = tanh_of(w.gate_w1 * x + w.gate_b1);
    r.alpha = sigmoid(w.gate_w2.dot(r.hidden) + w.gate_b2(0));
    return r;
}

FusionDims dims_of(const FusionInputs& in, const FusionParams& params) {
    FusionDims d;
    d.d_vit = static_cast<int>(in.p.cols());
    d.d_cnn = static_cast<int>(in.c.cols());
    d.d_attn = static_cast<int>(params.attn_wq.rows());
    d.d_out = static_cast<int>(params.bottleneck_w.rows());
    return d;
}

FusionOutput allocate_output(Index n, const FusionDims& d) {
    const Index V = d.d_vit, H = d.hidden(), A = d.d_attn;
    FusionOutput out;
    out.hA.resize(n, V);
    out.hB.resize(n, V);
    out.alpha.resize(n);
    out.h_pre.resize(n, V);
    out.h.resize(n, d.d_out);
    auto& k = out.cache;
    k.film_hidden.resize(n, H);
    k.gamma.resize(n, V);
    k.query.resize(n, A);
    k.key_local.resize(n, A);
    k.value_local.resize(n, V);
    k.attn.resize(n, 2);
    k.gate_hidden.resize(n, H);
    return out;
}

// Returns false when a patch produced a non-finite value.
bool forward_patch(Index i, const FusionInputs& in, const FusionParams& w, FusionOutput& out) {
    const Vector p = in.p.row(i).transpose();
    const Vector c = in.c.row(i).transpose();
    auto& k = out.cache;

    const FilmResult film = film_eval(p, c, w);
    k.film_hidden.row(i) = film.hidden.transpose();
    k.gamma.row(i) = film.gamma.transpose();
    out.hA.row(i) = film.h.transpose();

    const double scale = 1.0 / std::sqrt(static_cast<double>(w.attn_wq.rows()));
    const Vector q = w.attn_wq * p;
    const Vector key = w.attn_wk * c;
    const Vector value = w.attn_wv * c;
    const Eigen::Vector2d a = softmax2(scale * q.dot(key), scale * q.dot(k.key_global));
    k.query.row(i) = q.transpose();
    k.key_local.row(i) = key.transpose();
    k.value_local.row(i) = value.transpose();
    k.attn.row(i) = a.transpose();
    out.hB.row(i) = (a(0) * value + a(1) * k.value_global).transpose();

    const GateResult gr = gate_eval(p, c, w);
    k.gate_hidden.row(i) = gr.hidden.transpose();
    out.alpha(i) = gr.alpha;

    out.h_pre.row(i) = gr.alpha * out.hA.row(i) + (1.0 - gr.alpha) * out.hB.row(i);
    out.h.row(i) = (w.bottleneck_w * out.h_pre.row(i).transpose() + w.bottleneck_b).transpose();

    return out.hA.row(i).allFinite() && out.hB.row(i).allFinite() && std::isfinite(gr.alpha) &&
           out.h.row(i).allFinite();
}

void prepare(const FusionInputs& in, const FusionParams& params, FusionDims& dims) {
    dims = dims_of(in, params);
    dims.validate();
    params.validate(dims);
    in.validate(dims);
}

FusionOutput forward_impl(const FusionInputs& in, const FusionParams& params, bool parallel) {
    FusionDims dims;
    prepare(in, params, dims);
    const Index n = in.patches();
    FusionOutput out = allocate_output(n, dims);
    out.cache.key_global = params.attn_wk * in.g;
    out.cache.value_global = params.attn_wv * in.g;

    Index first_bad = n;
    if (parallel) {
#pragma omp parallel for schedule(static) reduction(min : first_bad)
        for (Index i = 0; i < n; ++i)
            if (!forward_patch(i, in, params, out)) first_bad = std::min(first_bad, i);
    } else {
        for (Index i = 0; i < n && first_bad == n; ++i)
            if (!forward_patch(i, in, params, out)) first_bad = i;
    }
    if (first_bad < n) throw NonFiniteError("non-finite fusion intermediate", first_bad);
    out.has_cache = true;
    return out;
}

struct Accum {
    FusionParams params;
    Vector g;
};

Accum zero_accum(const FusionDims& d) { return {FusionParams::zeros(d), Vector::Zero(d.d_cnn)}; }

void backward_patch(Index i, const FusionInputs& in, const FusionParams& w,
                    const FusionOutput& fwd, const Matrix& upstream, Accum& acc, FusionGrads& out) {
    const Index V = in.p.cols();
    const Index C = in.c.cols();
    const auto& k = fwd.cache;
    const Vector p = in.p.row(i).transpose();
    const Vector c = in.c.row(i).transpose();
    const Vector& g = in.g;
    auto& dw = acc.params;

    const Vector dh = upstream.row(i).transpose();
    const Vector h_pre = fwd.h_pre.row(i).transpose();
    dw.bottleneck_w.noalias() += dh * h_pre.transpose();
    dw.bottleneck_b += dh;
    const Vector dh_pre = w.bottleneck_w.transpose() * dh;

    const double alpha = fwd.alpha(i);
    const Vector hA = fwd.hA.row(i).transpose();
    const Vector hB = fwd.hB.row(i).transpose();
    const double dalpha = dh_pre.dot(hA - hB);
    const Vector dhA = alpha * dh_pre;
    const Vector dhB = (1.0 - alpha) * dh_pre;

    Vector dp = Vector::Zero(V);
    Vector dc = Vector::Zero(C);

    // gate
    {
        const Vector gh = k.gate_hidden.row(i).transpose();
        const double dlogit = dalpha * alpha * (1.0 - alpha);
        dw.gate_w2 += dlogit * gh;
        dw.gate_b2(0) += dlogit;
        const Vector dz = (dlogit * w.gate_w2).cwiseProduct((1.0 - gh.array().square()).matrix());
        Vector x(V + C);
        x << p, c;
        dw.gate_w1.noalias() += dz * x.transpose();
        dw.gate_b1 += dz;
        const Vector dx = w.gate_w1.transpose() * dz;
        dp += dx.head(V);
        dc += dx.tail(C);
    }

    // FiLM
    {
        const Vector fh = k.film_hidden.row(i).transpose();
        const Vector gamma = k.gamma.row(i).transpose();
        Vector dout(2 * V);
        dout << dhA.cwiseProduct(p), dhA;
        dp += dhA.cwiseProduct(gamma);
        dw.film_w2.noalias() += dout * fh.transpose();
        dw.film_b2 += dout;
        const Vector dz =
            (w.film_w2.transpose() * dout).cwiseProduct((1.0 - fh.array().square()).matrix());
        dw.film_w1.noalias() += dz * c.transpose();
        dw.film_b1 += dz;
        dc += w.film_w1.transpose() * dz;
    }

    // cross attention over (c, g)
    {
        const double a1 = k.attn(i, 0), a2 = k.attn(i, 1);
        const Vector v1 = k.value_local.row(i).transpose();
        const Vector& v2 = k.value_global;
        const Vector q = k.query.row(i).transpose();
        const Vector k1 = k.key_local.row(i).transpose();
        const Vector& k2 = k.key_global;

        const double da1 = dhB.dot(v1), da2 = dhB.dot(v2);
        const Vector dv1 = a1 * dhB, dv2 = a2 * dhB;
        dw.attn_wv.noalias() += dv1 * c.transpose() + dv2 * g.transpose();
        dc += w.attn_wv.transpose() * dv1;
        acc.g += w.attn_wv.transpose() * dv2;

        const double mean = a1 * da1 + a2 * da2;
        const double scale = 1.0 / std::sqrt(static_cast<double>(q.size()));
        const double ds1 = a1 * (da1 - mean) * scale;
        const double ds2 = a2 * (da2 - mean) * scale;
        const Vector dq = ds1 * k1 + ds2 * k2;
        const Vector dk1 = ds1 * q, dk2 = ds2 * q;
        dw.attn_wq.noalias() += dq * p.transpose();
        dp += w.attn_wq.transpose() * dq;
        dw.attn_wk.noalias() += dk1 * c.transpose() + dk2 * g.transpose();
        dc += w.attn_wk.transpose() * dk1;
        acc.g += w.attn_wk.transpose() * dk2;
    }

    out.p.row(i) = dp.transpose();
    out.c.row(i) = dc.transpose();
}

void add_into(Accum& dst, const Accum& src) {
    for_each_tensor_pair(dst.params, src.params,
                         [](const char*, auto& d, const auto& s) { d += s; });
    dst.g += src.g;
}

FusionGrads backward_impl(const FusionInputs& in, const FusionParams& params,
                          const FusionOutput& fwd, const Matrix& upstream, bool parallel) {
    FusionDims dims;
    prepare(in, params, dims);
    const Index n = in.patches();
    if (!fwd.has_cache || fwd.cache.attn.rows() != n || fwd.h_pre.rows() != n ||
        fwd.cache.key_global.size() != dims.d_attn)
        throw MissingCacheError("fuse_backward needs the cache from fuse_forward on the same inputs");
    expect_shape("upstream gradient", upstream, n, dims.d_out);

    FusionGrads out;
    out.p.resize(n, dims.d_vit);
    out.c.resize(n, dims.d_cnn);

    Accum total = zero_accum(dims);
    if (parallel) {
        const int threads = omp_get_max_threads();
        std::vector<Accum> partial(static_cast<std::size_t>(threads), total);
#pragma omp parallel
        {
            Accum& mine = partial[static_cast<std::size_t>(omp_get_thread_num())];
#pragma omp for schedule(static)
            for (Index i = 0; i < n; ++i) backward_patch(i, in, params, fwd, upstream, mine, out);
        }
        for (const auto& part : partial) add_into(total, part);
    } else {
        for (Index i = 0; i < n; ++i) backward_patch(i, in, params, fwd, upstream, total, out);
    }
    out.params = std::move(total.params);
    out.g = std::move(total.g);
    return out;
}

}  // namespace

NonFiniteError::NonFiniteError(std::string what, Index patch)
    : std::runtime_error(what + " at patch " + std::to_string(patch)), patch_(patch) {}

void FusionDims::validate() const {
    if (d_vit <= 0 || d_cnn <= 0 || d_attn <= 0 || d_out <= 0)
        throw ShapeError("fusion dimensions must be positive");
    if (d_out >= d_vit) throw ShapeError("bottleneck width d_out must be smaller than d_vit");
}

FusionDims FusionDims::with_default_bottleneck(int d_vit, int d_cnn, int d_attn) {
    return {d_vit, d_cnn, d_attn, d_vit / 2};
}

void FusionInputs::validate(const FusionDims& dims) const {
    if (p.rows() == 0) throw ShapeError("fusion inputs have no patches");
    expect_shape("p", p, p.rows(), dims.d_vit);
    expect_shape("c", c, p.rows(), dims.d_cnn);
    expect_size("g", g, dims.d_cnn);
}

FusionParams FusionParams::zeros(const FusionDims& d) {
    const Index V = d.d_vit, C = d.d_cnn, A = d.d_attn, H = d.hidden(), O = d.d_out;
    FusionParams w;
    w.film_w1 = Matrix::Zero(H, C);
    w.film_b1 = Vector::Zero(H);
    w.film_w2 = Matrix::Zero(2 * V, H);
    w.film_b2 = Vector::Zero(2 * V);
    w.attn_wq = Matrix::Zero(A, V);
    w.attn_wk = Matrix::Zero(A, C);
    w.attn_wv = Matrix::Zero(V, C);
    w.gate_w1 = Matrix::Zero(H, V + C);
    w.gate_b1 = Vector::Zero(H);
    w.gate_w2 = Vector::Zero(H);
    w.gate_b2 = Vector::Zero(1);
    w.bottleneck_w = Matrix::Zero(O, V);
    w.bottleneck_b = Vector::Zero(O);
    return w;
}

FusionParams FusionParams::init(const FusionDims& d, std::uint64_t seed) {
    d.validate();
    FusionParams w = zeros(d);
    std::mt19937_64 rng(seed);
    auto fill = [&](auto& t, Index fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Index j = 0; j < t.cols(); ++j)
            for (Index i = 0; i < t.rows(); ++i) t(i, j) = dist(rng);
    };
    const Index V = d.d_vit, C = d.d_cnn, H = d.hidden();
    fill(w.film_w1, C);
    fill(w.film_b1, C);
    fill(w.film_w2, H);
    fill(w.film_b2, H);
    fill(w.attn_wq, V);
    fill(w.attn_wk, C);
    fill(w.attn_wv, C);
    fill(w.gate_w1, V + C);
    fill(w.gate_b1, V + C);
    fill(w.gate_w2, H);
    fill(w.gate_b2, H);
    fill(w.bottleneck_w, V);
    fill(w.bottleneck_b, V);
    return w;
}

void FusionParams::validate(const FusionDims& d) const {
    const Index V = d.d_vit, C = d.d_cnn, A = d.d_attn, H = d.hidden(), O = d.d_out;
    expect_shape("film_w1", film_w1, H, C);
    expect_size("film_b1", film_b1, H);
    expect_shape("film_w2", film_w2, 2 * V, H);
    expect_size("film_b2", film_b2, 2 * V);
    expect_shape("attn_wq", attn_wq, A, V);
    expect_shape("attn_wk", attn_wk, A, C);
    expect_shape("attn_wv", attn_wv, V, C);
    expect_shape("gate_w1", gate_w1, H, V + C);
    expect_size("gate_b1", gate_b1, H);
    expect_size("gate_w2", gate_w2, H);
    expect_size("gate_b2", gate_b2, 1);
    expect_shape("bottleneck_w", bottleneck_w, O, V);
    expect_size("bottleneck_b", bottleneck_b, O);
}

std::size_t FusionParams::parameter_count() const {
    std::size_t n = 0;
    for_each_tensor(*this, [&](const char*, const auto& t) { n += static_cast<std::size_t>(t.size()); });
    return n;
}

Vector film_branch(const Vector& p, const Vector& c, const FusionParams& params) {
    const FusionDims d{static_cast<int>(p.size()), static_cast<int>(c.size()),
                       static_cast<int>(params.attn_wq.rows()),
                       static_cast<int>(params.bottleneck_w.rows())};
    expect_shape("film_w1", params.film_w1, d.hidden(), d.d_cnn);
    expect_shape("film_w2", params.film_w2, 2 * d.d_vit, d.hidden());
    expect_size("film_b1", params.film_b1, d.hidden());
    expect_size("film_b2", params.film_b2, 2 * d.d_vit);
    return film_eval(p, c, params).h;
}

Eigen::Vector2d attention_weights(const Vector& p, const Vector& c, const Vector& g,
                                  const FusionParams& params) {
    expect_shape("attn_wq", params.attn_wq, params.attn_wq.rows(), p.size());
    expect_shape("attn_wk", params.attn_wk, params.attn_wq.rows(), c.size());
    expect_size("g", g, c.size());
    const double scale = 1.0 / std::sqrt(static_cast<double>(params.attn_wq.rows()));
    const Vector q = params.attn_wq * p;
    return softmax2(scale * q.dot(params.attn_wk * c), scale * q.dot(params.attn_wk * g));
}

Vector cross_attn_branch(const Vector& p, const Vector& c, const Vector& g, const FusionParams& params) {
    const Eigen::Vector2d a = attention_weights(p, c, g, params);
    expect_shape("attn_wv", params.attn_wv, p.size(), c.size());
    return a(0) * (params.attn_wv * c) + a(1) * (params.attn_wv * g);
}

double gate(const Vector& p, const Vector& c, const FusionParams& params) {
    expect_shape("gate_w1", params.gate_w1, params.gate_w1.rows(), p.size() + c.size());
    expect_size("gate_b1", params.gate_b1, params.gate_w1.rows());
    expect_size("gate_w2", params.gate_w2, params.gate_w1.rows());
    expect_size("gate_b2", params.gate_b2, 1);
    return gate_eval(p, c, params).alpha;
}

FusionOutput fuse_forward(const FusionInputs& in, const FusionParams& params) {
    return forward_impl(in, params, true);
}

FusionOutput fuse_forward_serial(const FusionInputs& in, const FusionParams& params) {
    return forward_impl(in, params, false);
}

FusionGrads fuse_backward(const FusionInputs& in, const FusionParams& params,
                          const FusionOutput& fwd, const Matrix& upstream) {
    return backward_impl(in, params, fwd, upstream, true);
}

FusionGrads fuse_backward_serial(const FusionInputs& in, const FusionParams& params,
                                 const FusionOutput& fwd, const Matrix& upstream) {
    return backward_impl(in, params, fwd, upstream, false);
}

}  // namespace groundcount::fusion
