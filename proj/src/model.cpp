#include "pizzaquad/model.hpp"

#include "factored.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace pizzaquad {

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("invalid model config: " + msg); };
    if (p < 2) fail("p must be at least 2");
    if (d_model <= 0 || d_mlp <= 0 || d_head <= 0 || n_heads <= 0) fail("dimensions must be positive");
    if (d_head * n_heads > d_model) fail("d_head * n_heads exceeds d_model");
    if (epochs < 0) fail("epochs must be nonnegative");
    if (!(train_frac > 0.0 && train_frac < 1.0)) fail("train_frac must lie in (0, 1)");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) fail("weight_decay must be nonnegative");
}

ModelWeights ModelWeights::zeros(const ModelConfig& cfg) {
    ModelWeights w;
    w.W_E = Matrix::Zero(cfg.d_model, cfg.d_vocab());
    w.pos = Matrix::Zero(cfg.d_model, ModelConfig::n_ctx);
    for (int j = 0; j < cfg.n_heads; ++j) {
        w.W_V.push_back(Matrix::Zero(cfg.d_head, cfg.d_model));
        w.W_O.push_back(Matrix::Zero(cfg.d_model, cfg.d_head));
    }
    w.W_in = Matrix::Zero(cfg.d_mlp, cfg.d_model);
    w.b_in = Vector::Zero(cfg.d_mlp);
    w.W_out = Matrix::Zero(cfg.d_model, cfg.d_mlp);
    w.b_out = Vector::Zero(cfg.d_model);
    w.W_U = Matrix::Zero(cfg.d_vocab(), cfg.d_model);
    return w;
}

ModelWeights ModelWeights::random(const ModelConfig& cfg, std::uint64_t seed) {
    ModelWeights w = zeros(cfg);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x1417u};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto fill = [&](Matrix& m) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(m.cols()));
        // Row-major fill order so the draw sequence matches the file layout.
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = scale * normal(rng);
    };
    fill(w.W_E);
    fill(w.pos);
    for (auto& m : w.W_V) fill(m);
    for (auto& m : w.W_O) fill(m);
    fill(w.W_in);
    fill(w.W_out);
    fill(w.W_U);
    return w;
}

void ModelWeights::check_shapes(const ModelConfig& cfg) const {
    auto expect = [](const char* name, Eigen::Index r, Eigen::Index c, Eigen::Index er, Eigen::Index ec) {
        if (r != er || c != ec) {
            std::ostringstream os;
            os << "tensor " << name << " has shape [" << r << ", " << c << "], expected [" << er << ", " << ec << "]";
            throw std::invalid_argument(os.str());
        }
    };
    expect("W_E", W_E.rows(), W_E.cols(), cfg.d_model, cfg.d_vocab());
    expect("pos", pos.rows(), pos.cols(), cfg.d_model, ModelConfig::n_ctx);
    if (static_cast<int>(W_V.size()) != cfg.n_heads || static_cast<int>(W_O.size()) != cfg.n_heads)
        throw std::invalid_argument("head count does not match n_heads");
    for (int j = 0; j < cfg.n_heads; ++j) {
        expect("W_V", W_V[j].rows(), W_V[j].cols(), cfg.d_head, cfg.d_model);
        expect("W_O", W_O[j].rows(), W_O[j].cols(), cfg.d_model, cfg.d_head);
    }
    expect("W_in", W_in.rows(), W_in.cols(), cfg.d_mlp, cfg.d_model);
    expect("b_in", b_in.rows(), 1, cfg.d_mlp, 1);
    expect("W_out", W_out.rows(), W_out.cols(), cfg.d_model, cfg.d_mlp);
    expect("b_out", b_out.rows(), 1, cfg.d_model, 1);
    expect("W_U", W_U.rows(), W_U.cols(), cfg.d_vocab(), cfg.d_model);
}

bool ModelWeights::all_finite() const {
    auto sizes = tensor_sizes();
    auto data = tensors_data();
    for (std::size_t t = 0; t < data.size(); ++t)
        for (Eigen::Index i = 0; i < sizes[t]; ++i)
            if (!std::isfinite(data[t][i])) return false;
    return true;
}

Matrix ModelWeights::ov_circuit() const {
    Matrix ov = Matrix::Zero(W_O.front().rows(), W_V.front().cols());
    for (std::size_t j = 0; j < W_V.size(); ++j) ov.noalias() += W_O[j] * W_V[j];
    return ov;
}

Matrix ModelWeights::neuron_logit_map(int p) const { return W_U.topRows(p) * W_out; }

std::vector<double*> ModelWeights::tensors_data() {
    std::vector<double*> out{W_E.data(), pos.data()};
    for (auto& m : W_V) out.push_back(m.data());
    for (auto& m : W_O) out.push_back(m.data());
    out.insert(out.end(), {W_in.data(), b_in.data(), W_out.data(), b_out.data(), W_U.data()});
    return out;
}

std::vector<const double*> ModelWeights::tensors_data() const {
    auto mut = const_cast<ModelWeights*>(this)->tensors_data();
    return {mut.begin(), mut.end()};
}

std::vector<Eigen::Index> ModelWeights::tensor_sizes() const {
    std::vector<Eigen::Index> out{W_E.size(), pos.size()};
    for (const auto& m : W_V) out.push_back(m.size());
    for (const auto& m : W_O) out.push_back(m.size());
    out.insert(out.end(), {W_in.size(), b_in.size(), W_out.size(), b_out.size(), W_U.size()});
    return out;
}

Eigen::Index ModelWeights::parameter_count() const {
    Eigen::Index n = 0;
    for (auto s : tensor_sizes()) n += s;
    return n;
}

double& ModelWeights::coeff(Eigen::Index flat_index) {
    auto sizes = tensor_sizes();
    auto data = tensors_data();
    for (std::size_t t = 0; t < sizes.size(); ++t) {
        if (flat_index < sizes[t]) return data[t][flat_index];
        flat_index -= sizes[t];
    }
    throw std::out_of_range("parameter index out of range");
}

ModelWeights ModelWeights::zeros_like() const {
    ModelWeights z = *this;
    auto sizes = z.tensor_sizes();
    auto data = z.tensors_data();
    for (std::size_t t = 0; t < data.size(); ++t) std::fill(data[t], data[t] + sizes[t], 0.0);
    return z;
}

bool ModelWeights::operator==(const ModelWeights& o) const {
    auto sa = tensor_sizes();
    auto sb = o.tensor_sizes();
    if (sa != sb) return false;
    if (W_E.rows() != o.W_E.rows() || W_in.rows() != o.W_in.rows() || W_U.rows() != o.W_U.rows()) return false;
    auto da = tensors_data();
    auto db = o.tensors_data();
    for (std::size_t t = 0; t < da.size(); ++t)
        if (!std::equal(da[t], da[t] + sa[t], db[t])) return false;
    return true;
}

std::vector<std::pair<int, int>> all_pairs(int p) {
    std::vector<std::pair<int, int>> out;
    out.reserve(static_cast<std::size_t>(p) * p);
    for (int a = 0; a < p; ++a)
        for (int b = 0; b < p; ++b) out.emplace_back(a, b);
    return out;
}

Dataset generate_dataset(const ModelConfig& cfg) {
    cfg.validate();
    Dataset ds;
    ds.p = cfg.p;
    auto pairs = all_pairs(cfg.p);
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 0xda7au};
    std::mt19937_64 rng(seq);
    std::shuffle(pairs.begin(), pairs.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(cfg.train_frac * static_cast<double>(pairs.size())));
    ds.train_pairs.assign(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(n_train));
    ds.test_pairs.assign(pairs.begin() + static_cast<std::ptrdiff_t>(n_train), pairs.end());
    std::sort(ds.train_pairs.begin(), ds.train_pairs.end());
    std::sort(ds.test_pairs.begin(), ds.test_pairs.end());
    return ds;
}

ForwardResult forward(const ModelWeights& w, int p, int a, int b, bool capture) {
    if (a < 0 || a >= p || b < 0 || b >= p) throw std::out_of_range("token out of range");
    const Vector xa = w.W_E.col(a) + w.pos.col(0);
    const Vector xb = w.W_E.col(b) + w.pos.col(1);
    const Vector xeq = w.W_E.col(p) + w.pos.col(2);
    Vector attn = Vector::Zero(w.W_E.rows());
    for (std::size_t j = 0; j < w.W_V.size(); ++j) attn += w.W_O[j] * (w.W_V[j] * (0.5 * (xa + xb)));
    Activations act;
    act.x1 = xeq + attn;
    act.pre = w.W_in * act.x1 + w.b_in;
    act.post = act.pre.cwiseMax(0.0);
    act.x2 = act.x1 + w.W_out * act.post + w.b_out;
    ForwardResult out;
    out.logits = w.W_U.topRows(p) * act.x2;
    if (capture) out.activations = std::move(act);
    return out;
}

namespace detail {

TokenFactors::TokenFactors(const ModelWeights& w, int p) {
    ov = w.ov_circuit();
    xa = w.W_E.leftCols(p).colwise() + w.pos.col(0);
    xb = w.W_E.leftCols(p).colwise() + w.pos.col(1);
    ua.noalias() = 0.5 * ov * xa;
    ub.noalias() = 0.5 * ov * xb;
    e = w.W_E.col(p) + w.pos.col(2);
    pa.noalias() = w.W_in * ua;
    pb.noalias() = w.W_in * ub;
    pe = w.W_in * e + w.b_in;
    const auto wu = w.W_U.topRows(p);
    neuron_logit.noalias() = wu * w.W_out;
    ra.noalias() = wu * ua;
    rb.noalias() = wu * ub;
    re = wu * (e + w.b_out);
}

Matrix TokenFactors::preactivations(const std::vector<std::pair<int, int>>& batch) const {
    Matrix pre(pe.size(), static_cast<Eigen::Index>(batch.size()));
    for (std::size_t n = 0; n < batch.size(); ++n)
        pre.col(static_cast<Eigen::Index>(n)) = pe + pa.col(batch[n].first) + pb.col(batch[n].second);
    return pre;
}

Matrix TokenFactors::logits_from_post(const Matrix& post, const std::vector<std::pair<int, int>>& batch) const {
    Matrix logits(neuron_logit.rows(), post.cols());
    logits.noalias() = neuron_logit * post;
    for (std::size_t n = 0; n < batch.size(); ++n)
        logits.col(static_cast<Eigen::Index>(n)) += re + ra.col(batch[n].first) + rb.col(batch[n].second);
    return logits;
}

}  // namespace detail

Matrix batch_logits(const ModelWeights& w, int p, const std::vector<std::pair<int, int>>& batch) {
    for (const auto& [a, b] : batch)
        if (a < 0 || a >= p || b < 0 || b >= p) throw std::out_of_range("token out of range");
    detail::TokenFactors f(w, p);
    const Matrix post = f.preactivations(batch).cwiseMax(0.0);
    return f.logits_from_post(post, batch);
}

Matrix all_logits(const ModelWeights& w, int p) { return batch_logits(w, p, all_pairs(p)); }

namespace {

// Per-column log-softmax statistics; returns loss sum and correct count.
struct SoftmaxStats {
    double loss_sum = 0.0;
    int correct = 0;
};

SoftmaxStats softmax_in_place(Matrix& logits, const std::vector<std::pair<int, int>>& batch, int p, bool to_probs) {
    SoftmaxStats s;
    for (Eigen::Index n = 0; n < logits.cols(); ++n) {
        auto col = logits.col(n);
        Eigen::Index argmax = 0;
        const double mx = col.maxCoeff(&argmax);
        const double lse = mx + std::log((col.array() - mx).exp().sum());
        const int y = Dataset::label(p, batch[static_cast<std::size_t>(n)].first, batch[static_cast<std::size_t>(n)].second);
        s.loss_sum += lse - col(y);
        if (argmax == y) ++s.correct;
        if (to_probs) col = (col.array() - lse).exp().matrix();
    }
    return s;
}

}  // namespace

EvalResult evaluate(const ModelWeights& w, int p, const std::vector<std::pair<int, int>>& batch) {
    if (batch.empty()) return {};
    Matrix logits = batch_logits(w, p, batch);
    const auto s = softmax_in_place(logits, batch, p, false);
    const double n = static_cast<double>(batch.size());
    return {s.loss_sum / n, s.correct / n};
}

LossAndGrad loss_and_grad(const ModelWeights& w, int p, const std::vector<std::pair<int, int>>& batch) {
    if (batch.empty()) throw std::invalid_argument("loss_and_grad: empty batch");
    for (const auto& [a, b] : batch)
        if (a < 0 || a >= p || b < 0 || b >= p) throw std::out_of_range("token out of range");

    const detail::TokenFactors f(w, p);
    const Matrix pre = f.preactivations(batch);
    const Matrix post = pre.cwiseMax(0.0);
    Matrix dlogits = f.logits_from_post(post, batch);
    const auto stats = softmax_in_place(dlogits, batch, p, true);
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    for (std::size_t n = 0; n < batch.size(); ++n) {
        const auto [a, b] = batch[n];
        dlogits(Dataset::label(p, a, b), static_cast<Eigen::Index>(n)) -= 1.0;
    }
    dlogits *= inv_n;

    LossAndGrad out;
    out.loss = stats.loss_sum * inv_n;
    out.accuracy = stats.correct * inv_n;
    ModelWeights& g = out.grads;
    g = w.zeros_like();

    const Eigen::Index d_mlp = pre.rows();

    // Token-aggregated upstream gradients.
    Matrix dra = Matrix::Zero(p, p), drb = Matrix::Zero(p, p);
    Vector dre = Vector::Zero(p);
    Matrix dpa = Matrix::Zero(d_mlp, p), dpb = Matrix::Zero(d_mlp, p);
    Vector dpe = Vector::Zero(d_mlp);

    Matrix dpre(d_mlp, pre.cols());
    dpre.noalias() = f.neuron_logit.transpose() * dlogits;
    dpre = (pre.array() > 0.0).select(dpre, 0.0);
    const Matrix dneuron_logit = dlogits * post.transpose();

    for (std::size_t n = 0; n < batch.size(); ++n) {
        const auto [a, b] = batch[n];
        const auto col = static_cast<Eigen::Index>(n);
        dre += dlogits.col(col);
        dra.col(a) += dlogits.col(col);
        drb.col(b) += dlogits.col(col);
        dpe += dpre.col(col);
        dpa.col(a) += dpre.col(col);
        dpb.col(b) += dpre.col(col);
    }

    const auto wu = w.W_U.topRows(p);
    const Vector e_out = f.e + w.b_out;

    // neuron_logit = W_U[:p] W_out, r* = W_U[:p] u*, re = W_U[:p](e + b_out)
    Matrix dwu = dneuron_logit * w.W_out.transpose();
    dwu.noalias() += dra * f.ua.transpose();
    dwu.noalias() += drb * f.ub.transpose();
    dwu.noalias() += dre * e_out.transpose();
    g.W_U.topRows(p) = dwu;
    g.W_out.noalias() = wu.transpose() * dneuron_logit;
    g.b_out.noalias() = wu.transpose() * dre;

    Matrix dua = wu.transpose() * dra;
    Matrix dub = wu.transpose() * drb;
    Vector de = wu.transpose() * dre;

    // p* = W_in u*, pe = W_in e + b_in
    g.W_in.noalias() = dpa * f.ua.transpose();
    g.W_in.noalias() += dpb * f.ub.transpose();
    g.W_in.noalias() += dpe * f.e.transpose();
    g.b_in = dpe;
    dua.noalias() += w.W_in.transpose() * dpa;
    dub.noalias() += w.W_in.transpose() * dpb;
    de.noalias() += w.W_in.transpose() * dpe;

    // u* = 1/2 OV x*, x* = W_E[:, :p] + pos(*)
    Matrix dov = 0.5 * dua * f.xa.transpose();
    dov.noalias() += 0.5 * dub * f.xb.transpose();
    const Matrix dxa = 0.5 * f.ov.transpose() * dua;
    const Matrix dxb = 0.5 * f.ov.transpose() * dub;
    g.W_E.leftCols(p) = dxa + dxb;
    g.W_E.col(p) = de;
    g.pos.col(0) = dxa.rowwise().sum();
    g.pos.col(1) = dxb.rowwise().sum();
    g.pos.col(2) = de;

    for (std::size_t j = 0; j < w.W_V.size(); ++j) {
        g.W_O[j].noalias() = dov * w.W_V[j].transpose();
        g.W_V[j].noalias() = w.W_O[j].transpose() * dov;
    }
    return out;
}

}  // namespace pizzaquad
