#include "wpnn/diffcore.hpp"

#include <cmath>
#include <utility>

namespace wpnn::ad {

CTensor::CTensor(Mat r, Mat i) : re(std::move(r)), im(std::move(i)) {
    if (re.rows() != im.rows() || re.cols() != im.cols())
        throw std::invalid_argument("CTensor: re/im shape mismatch");
}

CTensor::CTensor(const CMat& z) : re(z.real()), im(z.imag()) {}

CTensor CTensor::zero(Eigen::Index rows, Eigen::Index cols) {
    return {Mat::Zero(rows, cols), Mat::Zero(rows, cols)};
}

CTensor CTensor::identity(Eigen::Index n) {
    return {Mat::Identity(n, n), Mat::Zero(n, n)};
}

CMat CTensor::complex() const {
    return re.cast<std::complex<double>>() +
           std::complex<double>(0, 1) * im.cast<std::complex<double>>();
}

CTensor cmatmul(const CTensor& a, const CTensor& b) {
    if (a.cols() != b.rows())
        throw std::invalid_argument("cmatmul: inner dimensions disagree");
    return {a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re};
}

// ---------------------------------------------------------------------------

Var Tape::make(Mat value, bool tracked,
               std::function<void(Tape&, const Mat&)> backprop) {
    Node n;
    n.value = std::move(value);
    n.tracked = tracked;
    if (tracked) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tape::Node& Tape::node(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
        throw std::invalid_argument("Tape: invalid node handle");
    return nodes_[static_cast<std::size_t>(v.id)];
}

void Tape::accumulate(Var v, const Mat& g) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.tracked) n.grad += g;
}

Var Tape::leaf(Mat value, bool requires_grad) {
    Var v = make(std::move(value), requires_grad, nullptr);
    nodes_.back().is_leaf = true;
    return v;
}

CVar Tape::leaf(const CTensor& value, bool requires_grad) {
    return {leaf(value.re, requires_grad), leaf(value.im, requires_grad)};
}

const Mat& Tape::value(Var v) const { return node(v).value; }

CTensor Tape::value(CVar v) const { return {value(v.re), value(v.im)}; }

const Mat& Tape::grad(Var v) const {
    const Node& n = node(v);
    if (!n.tracked) throw std::logic_error("Tape::grad: node is not tracked");
    return n.grad;
}

bool Tape::requires_grad(Var v) const { return node(v).tracked; }

static void check_same_shape(const Mat& a, const Mat& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

Var Tape::add(Var a, Var b) {
    check_same_shape(value(a), value(b), "add");
    bool tr = requires_grad(a) || requires_grad(b);
    return make(value(a) + value(b), tr, [a, b](Tape& t, const Mat& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

Var Tape::sub(Var a, Var b) {
    check_same_shape(value(a), value(b), "sub");
    bool tr = requires_grad(a) || requires_grad(b);
    return make(value(a) - value(b), tr, [a, b](Tape& t, const Mat& g) {
        t.accumulate(a, g);
        t.accumulate(b, -g);
    });
}

Var Tape::neg(Var a) {
    return make(-value(a), requires_grad(a),
                [a](Tape& t, const Mat& g) { t.accumulate(a, -g); });
}

Var Tape::mul(Var a, Var b) {
    check_same_shape(value(a), value(b), "mul");
    bool tr = requires_grad(a) || requires_grad(b);
    return make(value(a).cwiseProduct(value(b)), tr,
                [a, b](Tape& t, const Mat& g) {
                    t.accumulate(a, g.cwiseProduct(t.value(b)));
                    t.accumulate(b, g.cwiseProduct(t.value(a)));
                });
}

Var Tape::matmul(Var a, Var b) {
    if (value(a).cols() != value(b).rows())
        throw std::invalid_argument("matmul: inner dimensions disagree");
    bool tr = requires_grad(a) || requires_grad(b);
    return make(value(a) * value(b), tr, [a, b](Tape& t, const Mat& g) {
        t.accumulate(a, g * t.value(b).transpose());
        t.accumulate(b, t.value(a).transpose() * g);
    });
}

Var Tape::matmul_const(Mat a, Var b) {
    if (a.cols() != value(b).rows())
        throw std::invalid_argument("matmul_const: inner dimensions disagree");
    Mat y = a * value(b);
    return make(std::move(y), requires_grad(b),
                [a = std::move(a), b](Tape& t, const Mat& g) {
                    t.accumulate(b, a.transpose() * g);
                });
}

Var Tape::scale(Var a, double c) {
    return make(value(a) * c, requires_grad(a),
                [a, c](Tape& t, const Mat& g) { t.accumulate(a, g * c); });
}

Var Tape::add_const(Var a, Mat c) {
    check_same_shape(value(a), c, "add_const");
    return make(value(a) + c, requires_grad(a),
                [a](Tape& t, const Mat& g) { t.accumulate(a, g); });
}

Var Tape::bias_cols(Var x, Var bias) {
    if (value(bias).cols() != 1 || value(bias).rows() != value(x).rows())
        throw std::invalid_argument("bias_cols: bias must be d x 1");
    Mat y = value(x).colwise() + value(bias).col(0);
    bool tr = requires_grad(x) || requires_grad(bias);
    return make(std::move(y), tr, [x, bias](Tape& t, const Mat& g) {
        t.accumulate(x, g);
        t.accumulate(bias, g.rowwise().sum());
    });
}

Var Tape::sum(Var a) {
    Mat y(1, 1);
    y(0, 0) = value(a).sum();
    return make(y, requires_grad(a), [a](Tape& t, const Mat& g) {
        const Mat& av = t.value(a);
        t.accumulate(a, Mat::Constant(av.rows(), av.cols(), g(0, 0)));
    });
}

Var Tape::sum_sq(Var a) {
    Mat y(1, 1);
    y(0, 0) = value(a).squaredNorm();
    return make(y, requires_grad(a), [a](Tape& t, const Mat& g) {
        t.accumulate(a, 2.0 * g(0, 0) * t.value(a));
    });
}

Var Tape::mean(Var a) {
    Mat y(1, 1);
    y(0, 0) = value(a).mean();
    return make(y, requires_grad(a), [a](Tape& t, const Mat& g) {
        const Mat& av = t.value(a);
        double c = g(0, 0) / static_cast<double>(av.size());
        t.accumulate(a, Mat::Constant(av.rows(), av.cols(), c));
    });
}

Var Tape::relu(Var a) {
    // sub-gradient at 0 is 0
    Mat y = value(a).cwiseMax(0.0);
    return make(std::move(y), requires_grad(a), [a](Tape& t, const Mat& g) {
        t.accumulate(a, (t.value(a).array() > 0.0).select(g, Mat::Zero(g.rows(), g.cols())));
    });
}

Var Tape::leaky_relu(Var a, double slope) {
    if (slope <= 0.0 || slope >= 1.0)
        throw std::invalid_argument("leaky_relu: slope must lie in (0,1)");
    Mat y = value(a).unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
    return make(std::move(y), requires_grad(a),
                [a, slope](Tape& t, const Mat& g) {
                    t.accumulate(a, (t.value(a).array() > 0.0)
                                        .select(g, (g.array() * slope).matrix()));
                });
}

Var Tape::mul_scalar(Var s, Var x) {
    if (value(s).size() != 1)
        throw std::invalid_argument("mul_scalar: s must be 1x1");
    double sv = value(s)(0, 0);
    bool tr = requires_grad(s) || requires_grad(x);
    return make(value(x) * sv, tr, [s, x, sv](Tape& t, const Mat& g) {
        Mat ds(1, 1);
        ds(0, 0) = g.cwiseProduct(t.value(x)).sum();
        t.accumulate(s, ds);
        t.accumulate(x, g * sv);
    });
}

Var Tape::colwise_mul(Var x, Var v) {
    if (value(v).cols() != 1 || value(v).rows() != value(x).rows())
        throw std::invalid_argument("colwise_mul: v must be d x 1");
    Mat y = value(x).array().colwise() * value(v).col(0).array();
    bool tr = requires_grad(x) || requires_grad(v);
    return make(std::move(y), tr, [x, v](Tape& t, const Mat& g) {
        t.accumulate(x, (g.array().colwise() * t.value(v).col(0).array()).matrix());
        t.accumulate(v, g.cwiseProduct(t.value(x)).rowwise().sum());
    });
}

Var Tape::unary(Var a, std::function<double(double)> f,
                std::function<double(double)> df) {
    Mat y = value(a).unaryExpr([&f](double v) { return f(v); });
    return make(std::move(y), requires_grad(a),
                [a, df = std::move(df)](Tape& t, const Mat& g) {
                    Mat d = t.value(a).unaryExpr([&df](double v) { return df(v); });
                    t.accumulate(a, g.cwiseProduct(d));
                });
}

Var Tape::softmax_xent(Var logits, std::vector<int> labels) {
    const Mat& z = value(logits);
    const auto batch = z.cols();
    if (static_cast<Eigen::Index>(labels.size()) != batch)
        throw std::invalid_argument("softmax_xent: one label per column required");
    Mat p(z.rows(), z.cols());
    double loss = 0.0;
    for (Eigen::Index b = 0; b < batch; ++b) {
        if (labels[static_cast<std::size_t>(b)] < 0 ||
            labels[static_cast<std::size_t>(b)] >= z.rows())
            throw std::invalid_argument("softmax_xent: label out of range");
        Eigen::VectorXd col = z.col(b);
        double m = col.maxCoeff();
        Eigen::VectorXd e = (col.array() - m).exp();
        double s = e.sum();
        p.col(b) = e / s;
        loss -= std::log(p(labels[static_cast<std::size_t>(b)], b));
    }
    Mat y(1, 1);
    y(0, 0) = loss / static_cast<double>(batch);
    return make(y, requires_grad(logits),
                [logits, p = std::move(p), labels = std::move(labels)](
                    Tape& t, const Mat& g) {
                    Mat d = p;
                    const auto batch = d.cols();
                    for (Eigen::Index b = 0; b < batch; ++b)
                        d(labels[static_cast<std::size_t>(b)], b) -= 1.0;
                    t.accumulate(logits, d * (g(0, 0) / static_cast<double>(batch)));
                });
}

Var Tape::circ_conv1d(Var x, Var k, int n, int c_in, int c_out, int klen) {
    const Mat& xv = value(x);
    const Mat& kv = value(k);
    if (xv.rows() != static_cast<Eigen::Index>(c_in) * n)
        throw std::invalid_argument("circ_conv1d: x rows must be c_in*n");
    if (kv.rows() != c_out || kv.cols() != static_cast<Eigen::Index>(c_in) * klen)
        throw std::invalid_argument("circ_conv1d: k must be c_out x (c_in*klen)");
    if (klen > n)
        throw std::invalid_argument("circ_conv1d: kernel longer than sequence");
    const auto batch = xv.cols();

    // im2col: Xcol(i*klen+j, b*n+p) = x(i*n + (p-j mod n), b)
    Mat xcol(static_cast<Eigen::Index>(c_in) * klen, batch * n);
    for (int i = 0; i < c_in; ++i)
        for (int j = 0; j < klen; ++j)
            for (int p = 0; p < n; ++p) {
                int src = i * n + (p - j + n) % n;
                for (Eigen::Index b = 0; b < batch; ++b)
                    xcol(i * klen + j, b * n + p) = xv(src, b);
            }
    Mat y2 = kv * xcol;  // c_out x (B*n)
    Mat y(static_cast<Eigen::Index>(c_out) * n, batch);
    for (int o = 0; o < c_out; ++o)
        for (Eigen::Index b = 0; b < batch; ++b)
            for (int p = 0; p < n; ++p) y(o * n + p, b) = y2(o, b * n + p);

    bool tr = requires_grad(x) || requires_grad(k);
    return make(std::move(y), tr,
                [x, k, n, c_in, c_out, klen, xcol = std::move(xcol)](
                    Tape& t, const Mat& g) {
                    const auto batch = g.cols();
                    Mat g2(c_out, batch * n);
                    for (int o = 0; o < c_out; ++o)
                        for (Eigen::Index b = 0; b < batch; ++b)
                            for (int p = 0; p < n; ++p)
                                g2(o, b * n + p) = g(o * n + p, b);
                    t.accumulate(k, g2 * xcol.transpose());
                    if (t.requires_grad(x)) {
                        Mat dxcol = t.value(k).transpose() * g2;
                        Mat dx = Mat::Zero(static_cast<Eigen::Index>(c_in) * n, batch);
                        for (int i = 0; i < c_in; ++i)
                            for (int j = 0; j < klen; ++j)
                                for (int p = 0; p < n; ++p) {
                                    int dst = i * n + (p - j + n) % n;
                                    for (Eigen::Index b = 0; b < batch; ++b)
                                        dx(dst, b) += dxcol(i * klen + j, b * n + p);
                                }
                        t.accumulate(x, dx);
                    }
                });
}

CVar Tape::cadd(CVar a, CVar b) { return {add(a.re, b.re), add(a.im, b.im)}; }

CVar Tape::csub(CVar a, CVar b) { return {sub(a.re, b.re), sub(a.im, b.im)}; }

CVar Tape::cmatmul(CVar a, CVar b) {
    return {sub(matmul(a.re, b.re), matmul(a.im, b.im)),
            add(matmul(a.re, b.im), matmul(a.im, b.re))};
}

CVar Tape::cmatmul_const(const CTensor& a, CVar b) {
    return {sub(matmul_const(a.re, b.re), matmul_const(a.im, b.im)),
            add(matmul_const(a.re, b.im), matmul_const(a.im, b.re))};
}

CVar Tape::cadd_const(CVar a, const CTensor& c) {
    return {add_const(a.re, c.re), add_const(a.im, c.im)};
}

CVar Tape::cscale(CVar a, std::complex<double> c) {
    return {sub(scale(a.re, c.real()), scale(a.im, c.imag())),
            add(scale(a.re, c.imag()), scale(a.im, c.real()))};
}

CVar Tape::cmul(CVar a, CVar b) {
    return {sub(mul(a.re, b.re), mul(a.im, b.im)),
            add(mul(a.re, b.im), mul(a.im, b.re))};
}

CVar Tape::ccolwise_mul(CVar x, CVar v) {
    return {sub(colwise_mul(x.re, v.re), colwise_mul(x.im, v.im)),
            add(colwise_mul(x.im, v.re), colwise_mul(x.re, v.im))};
}

void Tape::backward(Var loss) {
    Node& ln = nodes_.at(static_cast<std::size_t>(loss.id));
    if (ln.value.size() != 1)
        throw std::invalid_argument("backward: loss must be scalar");
    if (!ln.tracked) return;  // no tracked leaves anywhere upstream
    ln.grad(0, 0) = 1.0;
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.tracked && n.backprop) n.backprop(*this, n.grad);
    }
}

std::map<int, Mat> Tape::gradients() const {
    std::map<int, Mat> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        if (nodes_[i].is_leaf && nodes_[i].tracked)
            out.emplace(static_cast<int>(i), nodes_[i].grad);
    return out;
}

// ---------------------------------------------------------------------------

void adam_step(std::vector<Mat*> params, const std::vector<Mat>& grads,
               AdamState& state, double lr, const AdamConfig& cfg) {
    if (params.size() != grads.size())
        throw std::invalid_argument("adam_step: params/grads size mismatch");
    for (const Mat& g : grads)
        if (!g.allFinite())
            throw std::runtime_error("adam_step: non-finite gradient, step rejected");
    if (state.m.empty()) {
        for (const Mat* p : params) {
            state.m.emplace_back(Mat::Zero(p->rows(), p->cols()));
            state.v.emplace_back(Mat::Zero(p->rows(), p->cols()));
        }
    }
    if (state.m.size() != params.size())
        throw std::invalid_argument("adam_step: state does not match parameters");
    ++state.step_count;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step_count));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Mat& m = state.m[i];
        Mat& v = state.v[i];
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grads[i];
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grads[i].cwiseProduct(grads[i]);
        Mat mhat = m / bc1;
        Mat vhat = v / bc2;
        *params[i] -= lr * mhat.cwiseQuotient(
            (vhat.cwiseSqrt().array() + cfg.eps).matrix());
    }
}

}  // namespace wpnn::ad
