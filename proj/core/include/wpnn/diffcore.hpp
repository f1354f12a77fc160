#pragma once

#include <Eigen/Dense>
#include <complex>
#include <functional>
#include <map>
#include <stdexcept>
#include <vector>

namespace wpnn::ad {

using Mat = Eigen::MatrixXd;
using CMat = Eigen::MatrixXcd;

// Complex-valued tensor stored as paired real components.
struct CTensor {
    Mat re, im;

    CTensor() = default;
    CTensor(Mat r, Mat i);
    explicit CTensor(const CMat& z);

    static CTensor zero(Eigen::Index rows, Eigen::Index cols);
    static CTensor identity(Eigen::Index n);

    CMat complex() const;
    Eigen::Index rows() const { return re.rows(); }
    Eigen::Index cols() const { return re.cols(); }
    double squared_norm() const { return re.squaredNorm() + im.squaredNorm(); }
};

// Value-level complex matrix product (no gradient tracking).
CTensor cmatmul(const CTensor& a, const CTensor& b);

// Handle to a node on a Tape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Complex node as a pair of real nodes.
struct CVar {
    Var re, im;
};

// Define-by-run reverse-mode tape over real matrices. Complex arithmetic is
// expressed on re/im pairs, so all gradients are plain real gradients and can
// be checked by finite differences.
class Tape {
public:
    Var leaf(Mat value, bool requires_grad = false);
    CVar leaf(const CTensor& value, bool requires_grad = false);

    const Mat& value(Var v) const;
    CTensor value(CVar v) const;
    const Mat& grad(Var v) const;
    bool requires_grad(Var v) const;
    std::size_t size() const { return nodes_.size(); }

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var neg(Var a);
    Var mul(Var a, Var b);  // elementwise
    Var matmul(Var a, Var b);
    Var matmul_const(Mat a, Var b);  // constant left factor
    Var scale(Var a, double c);
    Var add_const(Var a, Mat c);
    Var bias_cols(Var x, Var bias);  // x (d x B) + bias (d x 1) broadcast
    Var sum(Var a);
    Var sum_sq(Var a);
    Var mean(Var a);
    Var relu(Var a);
    Var leaky_relu(Var a, double slope);
    Var mul_scalar(Var s, Var x);  // (1x1) * matrix
    Var colwise_mul(Var x, Var v);  // each column of x scaled elementwise by v (d x 1)

    // Generic smooth elementwise op with analytic derivative.
    Var unary(Var a, std::function<double(double)> f,
              std::function<double(double)> df);

    // Mean softmax cross-entropy over columns; labels[b] indexes the row.
    Var softmax_xent(Var logits, std::vector<int> labels);

    // Circular 1-D convolution. x is (c_in*n) x B with channel-major row
    // blocks, k is c_out x (c_in*klen), output is (c_out*n) x B:
    //   y[o*n+p] = sum_{i,j} k[o, i*klen+j] * x[i*n + (p-j mod n)]
    Var circ_conv1d(Var x, Var k, int n, int c_in, int c_out, int klen);

    CVar cadd(CVar a, CVar b);
    CVar csub(CVar a, CVar b);
    CVar cmatmul(CVar a, CVar b);
    CVar cmatmul_const(const CTensor& a, CVar b);
    CVar cadd_const(CVar a, const CTensor& c);
    CVar cscale(CVar a, std::complex<double> c);
    CVar cmul(CVar a, CVar b);                // elementwise complex product
    CVar ccolwise_mul(CVar x, CVar v);        // per-column diag(v) * x

    // Reverse sweep from a scalar loss. Each node is visited once.
    void backward(Var loss);

    // Gradients of all requires_grad leaves; empty if there are none.
    std::map<int, Mat> gradients() const;

private:
    struct Node {
        Mat value;
        Mat grad;
        bool tracked = false;
        bool is_leaf = false;
        std::function<void(Tape&, const Mat&)> backprop;
    };

    Var make(Mat value, bool tracked,
             std::function<void(Tape&, const Mat&)> backprop);
    void accumulate(Var v, const Mat& g);
    const Node& node(Var v) const;

    std::vector<Node> nodes_;
    friend struct TapeTestAccess;
};

// Adam optimizer state; one moment pair per parameter, zero-initialized.
struct AdamState {
    std::vector<Mat> m, v;
    long step_count = 0;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Standard bias-corrected Adam update, in place. Rejects non-finite
// gradients without touching the parameters.
void adam_step(std::vector<Mat*> params, const std::vector<Mat>& grads,
               AdamState& state, double lr, const AdamConfig& cfg = {});

}  // namespace wpnn::ad
