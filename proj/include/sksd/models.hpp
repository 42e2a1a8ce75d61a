#pragma once

#include <cmath>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "sksd/common.hpp"

namespace sksd {

using json = nlohmann::json;

/// A distribution with a tractable score function s(x) = grad log density.
/// Models are immutable after construction; evaluations are pure.
class ScoreModel {
public:
    virtual ~ScoreModel() = default;

    virtual int dim() const = 0;
    virtual bool has_logp() const { return false; }
    virtual bool has_score_jacobian() const { return false; }
    virtual bool has_sampler() const { return false; }

    virtual double logp(const Vector& x) const {
        (void)x;
        throw std::logic_error("model does not expose logp");
    }
    virtual Vector score(const Vector& x) const = 0;

    /// Rowwise scores for a batch; overridden where a matrix form is cheaper.
    virtual Matrix score_matrix(const Matrix& X) const {
        Matrix S(X.rows(), X.cols());
        for (Eigen::Index i = 0; i < X.rows(); ++i) S.row(i) = score(X.row(i).transpose()).transpose();
        return S;
    }

    /// J(x) with J(i,j) = d score_i / d x_j.
    virtual Matrix score_jacobian(const Vector& x) const {
        (void)x;
        throw std::logic_error("model does not expose a score Jacobian");
    }

    /// J(x) * v without materializing J; overridden where structure allows O(D).
    virtual Vector score_jacobian_vp(const Vector& x, const Vector& v) const {
        return score_jacobian(x) * v;
    }

    virtual Matrix sample(Eigen::Index n, std::uint64_t seed) const {
        (void)n;
        (void)seed;
        throw std::logic_error("model does not expose a sampler");
    }

    virtual json to_json() const = 0;
};

using ModelPtr = std::shared_ptr<const ScoreModel>;

// ---------------------------------------------------------------------------
// Diagonal Gaussian
// ---------------------------------------------------------------------------

inline Vector gaussian_score(const Vector& x, const Vector& mean, const Vector& var_diag) {
    require(x.size() == mean.size() && x.size() == var_diag.size(), "gaussian_score: size mismatch");
    require((var_diag.array() > 0.0).all(), "gaussian_score: variances must be positive");
    require_finite(x, "gaussian_score x");
    return -((x - mean).array() / var_diag.array()).matrix();
}

class GaussianModel final : public ScoreModel {
public:
    GaussianModel(Vector mean, Vector var_diag) : mean_(std::move(mean)), var_(std::move(var_diag)) {
        require(mean_.size() == var_.size(), "GaussianModel: mean/var size mismatch");
        require((var_.array() > 0.0).all(), "GaussianModel: variances must be positive");
    }
    static GaussianModel standard(int dim) { return {Vector::Zero(dim), Vector::Ones(dim)}; }

    int dim() const override { return static_cast<int>(mean_.size()); }
    bool has_logp() const override { return true; }
    bool has_score_jacobian() const override { return true; }
    bool has_sampler() const override { return true; }

    double logp(const Vector& x) const override {
        const double quad = ((x - mean_).array().square() / var_.array()).sum();
        const double norm = (var_.array() * 2.0 * M_PI).log().sum();
        return -0.5 * (quad + norm);
    }
    Vector score(const Vector& x) const override { return gaussian_score(x, mean_, var_); }
    Matrix score_matrix(const Matrix& X) const override {
        return -((X.rowwise() - mean_.transpose()).array().rowwise() / var_.transpose().array());
    }
    Matrix score_jacobian(const Vector&) const override {
        return (-var_.array().inverse()).matrix().asDiagonal();
    }
    Vector score_jacobian_vp(const Vector&, const Vector& v) const override {
        return -(v.array() / var_.array()).matrix();
    }
    Matrix sample(Eigen::Index n, std::uint64_t seed) const override {
        Rng rng(seed);
        Matrix X = rng.normal_mat(n, dim());
        X.array().rowwise() *= var_.array().sqrt().transpose();
        X.rowwise() += mean_.transpose();
        return X;
    }
    json to_json() const override {
        return {{"type", "gaussian"}, {"dim", dim()},
                {"mean", std::vector<double>(mean_.begin(), mean_.end())},
                {"var_diag", std::vector<double>(var_.begin(), var_.end())}};
    }

    const Vector& mean() const { return mean_; }
    const Vector& var_diag() const { return var_; }

private:
    Vector mean_, var_;
};

// ---------------------------------------------------------------------------
// Factorized Laplace, location 0
// ---------------------------------------------------------------------------

inline Vector laplace_score(const Vector& x, double scale) {
    require(scale > 0.0, "laplace_score: scale must be positive");
    require_finite(x, "laplace_score x");
    // sign(0) = 0 so the score is total
    return -(x.array().sign() / scale).matrix();
}

class LaplaceModel final : public ScoreModel {
public:
    LaplaceModel(int dim, double scale) : dim_(dim), scale_(scale) {
        require(dim > 0, "LaplaceModel: dim must be positive");
        require(scale > 0.0, "LaplaceModel: scale must be positive");
    }

    int dim() const override { return dim_; }
    bool has_logp() const override { return true; }
    bool has_score_jacobian() const override { return true; }
    bool has_sampler() const override { return true; }

    double logp(const Vector& x) const override {
        return (-x.array().abs() / scale_ - std::log(2.0 * scale_)).sum();
    }
    Vector score(const Vector& x) const override { return laplace_score(x, scale_); }
    Matrix score_matrix(const Matrix& X) const override { return -(X.array().sign() / scale_); }
    // zero almost everywhere; the axis set {x_d = 0} has measure zero
    Matrix score_jacobian(const Vector&) const override { return Matrix::Zero(dim_, dim_); }
    Vector score_jacobian_vp(const Vector&, const Vector&) const override { return Vector::Zero(dim_); }
    Matrix sample(Eigen::Index n, std::uint64_t seed) const override {
        Rng rng(seed);
        Matrix X(n, dim_);
        for (Eigen::Index i = 0; i < n; ++i)
            for (int d = 0; d < dim_; ++d) {
                const double e = rng.exponential() - rng.exponential();
                X(i, d) = scale_ * e;
            }
        return X;
    }
    json to_json() const override { return {{"type", "laplace"}, {"dim", dim_}, {"scale", scale_}}; }

    double scale() const { return scale_; }

private:
    int dim_;
    double scale_;
};

// ---------------------------------------------------------------------------
// Student-t: factorized (independent 1-D t per coordinate) or joint
// multivariate-t with identity scale
// ---------------------------------------------------------------------------

inline Vector mvt_score_factorized(const Vector& x, double nu) {
    require(nu > 0.0, "mvt_score: nu must be positive");
    require_finite(x, "mvt_score x");
    return (-(nu + 1.0) * x.array() / (nu + x.array().square())).matrix();
}

inline Vector mvt_score_joint(const Vector& x, double nu) {
    require(nu > 0.0, "mvt_score: nu must be positive");
    require_finite(x, "mvt_score x");
    const double denom = nu + x.squaredNorm();
    return -(nu + static_cast<double>(x.size())) / denom * x;
}

class StudentTModel final : public ScoreModel {
public:
    StudentTModel(int dim, double nu, bool joint) : dim_(dim), nu_(nu), joint_(joint) {
        require(dim > 0, "StudentTModel: dim must be positive");
        require(nu > 0.0, "StudentTModel: nu must be positive");
    }

    int dim() const override { return dim_; }
    bool has_logp() const override { return true; }
    bool has_score_jacobian() const override { return true; }
    bool has_sampler() const override { return true; }

    double logp(const Vector& x) const override {
        if (joint_) {
            const double D = dim_;
            return std::lgamma(0.5 * (nu_ + D)) - std::lgamma(0.5 * nu_) - 0.5 * D * std::log(nu_ * M_PI) -
                   0.5 * (nu_ + D) * std::log1p(x.squaredNorm() / nu_);
        }
        const double c = std::lgamma(0.5 * (nu_ + 1.0)) - std::lgamma(0.5 * nu_) - 0.5 * std::log(nu_ * M_PI);
        return dim_ * c - 0.5 * (nu_ + 1.0) * (x.array().square() / nu_).log1p().sum();
    }

    Vector score(const Vector& x) const override {
        return joint_ ? mvt_score_joint(x, nu_) : mvt_score_factorized(x, nu_);
    }

    Matrix score_matrix(const Matrix& X) const override {
        if (joint_) {
            const Vector denom = (X.rowwise().squaredNorm().array() + nu_).matrix();
            return -(nu_ + dim_) * (X.array().colwise() / denom.array());
        }
        return -(nu_ + 1.0) * (X.array() / (X.array().square() + nu_));
    }

    Matrix score_jacobian(const Vector& x) const override {
        if (joint_) {
            const double denom = nu_ + x.squaredNorm();
            const double c = nu_ + dim_;
            return -c / denom * Matrix::Identity(dim_, dim_) + (2.0 * c / (denom * denom)) * (x * x.transpose());
        }
        return (-(nu_ + 1.0) * (nu_ - x.array().square()) / (nu_ + x.array().square()).square())
            .matrix()
            .asDiagonal();
    }

    Vector score_jacobian_vp(const Vector& x, const Vector& v) const override {
        if (joint_) {
            const double denom = nu_ + x.squaredNorm();
            const double c = nu_ + dim_;
            return -c / denom * v + (2.0 * c * x.dot(v) / (denom * denom)) * x;
        }
        return score_jacobian(x) * v;
    }

    Matrix sample(Eigen::Index n, std::uint64_t seed) const override {
        Rng rng(seed);
        Matrix X(n, dim_);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (joint_) {
                const double w = rng.chi_squared(nu_);
                const double s = std::sqrt(nu_ / w);
                for (int d = 0; d < dim_; ++d) X(i, d) = s * rng.normal();
            } else {
                for (int d = 0; d < dim_; ++d) X(i, d) = rng.normal() * std::sqrt(nu_ / rng.chi_squared(nu_));
            }
        }
        return X;
    }

    json to_json() const override {
        return {{"type", "mvt"}, {"dim", dim_}, {"nu", nu_}, {"joint", joint_}};
    }

    double nu() const { return nu_; }
    bool joint() const { return joint_; }

private:
    int dim_;
    double nu_;
    bool joint_;
};

// ---------------------------------------------------------------------------
// Gaussian-Bernoulli RBM with +-1 hidden units:
//   p(x) prop. sum_h exp(x^T B h + b^T x + c^T h - ||x||^2 / 2)
// Marginalizing h gives log p(x) = b^T x - ||x||^2/2 + sum_j log 2cosh((B^T x + c)_j) + const.
// ---------------------------------------------------------------------------

inline Vector rbm_score(const Vector& x, const Matrix& B, const Vector& b, const Vector& c) {
    require(B.rows() == x.size() && B.rows() == b.size() && B.cols() == c.size(),
            "rbm_score: shape mismatch");
    require_finite(x, "rbm_score x");
    return b - x + B * (B.transpose() * x + c).array().tanh().matrix();
}

class RbmModel final : public ScoreModel {
public:
    RbmModel(Matrix B, Vector b, Vector c) : B_(std::move(B)), b_(std::move(b)), c_(std::move(c)) {
        require(B_.rows() == b_.size() && B_.cols() == c_.size(), "RbmModel: shape mismatch");
    }

    static RbmModel random(int dim, int hidden, std::uint64_t seed) {
        Rng rng(seed);
        return {rng.normal_mat(dim, hidden), rng.normal_vec(dim), rng.normal_vec(hidden)};
    }

    /// Same b, c; B perturbed entrywise by N(0, sigma^2) noise.
    RbmModel perturbed(double sigma, std::uint64_t seed) const {
        Rng rng(seed);
        return {B_ + sigma * rng.normal_mat(B_.rows(), B_.cols()), b_, c_};
    }

    int dim() const override { return static_cast<int>(B_.rows()); }
    int hidden_dim() const { return static_cast<int>(B_.cols()); }
    bool has_logp() const override { return true; }
    bool has_score_jacobian() const override { return true; }
    bool has_sampler() const override { return true; }

    /// Log density up to the (intractable) normalizing constant.
    double logp(const Vector& x) const override {
        const Vector a = B_.transpose() * x + c_;
        // log 2cosh(y) = |y| + log1p(exp(-2|y|))
        const double hid = (a.array().abs() + (-2.0 * a.array().abs()).exp().log1p()).sum();
        return b_.dot(x) - 0.5 * x.squaredNorm() + hid;
    }

    Vector score(const Vector& x) const override { return rbm_score(x, B_, b_, c_); }

    Matrix score_matrix(const Matrix& X) const override {
        Matrix T = ((X * B_).rowwise() + c_.transpose()).array().tanh();
        return (T * B_.transpose() - X).rowwise() + b_.transpose();
    }

    Matrix score_jacobian(const Vector& x) const override {
        const Vector t = (B_.transpose() * x + c_).array().tanh();
        const Vector sech2 = (1.0 - t.array().square()).matrix();
        return -Matrix::Identity(dim(), dim()) + B_ * sech2.asDiagonal() * B_.transpose();
    }

    /// Block Gibbs: h | x from P(h_j = 1 | x) = sigmoid(2 (B^T x + c)_j),
    /// x | h ~ N(Bh + b, I).  One independent chain per returned row.
    Matrix sample_gibbs(Eigen::Index n, int burn_in, std::uint64_t seed) const {
        require(burn_in >= 0, "sample_gibbs: burn_in must be nonnegative");
        const int D = dim(), H = hidden_dim();
        Matrix X(n, D);
        for (Eigen::Index i = 0; i < n; ++i) {
            Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
            Vector x = rng.normal_vec(D);
            Vector h(H);
            for (int t = 0; t < burn_in; ++t) {
                const Vector a = B_.transpose() * x + c_;
                for (int j = 0; j < H; ++j) {
                    const double p1 = 1.0 / (1.0 + std::exp(-2.0 * a[j]));
                    h[j] = rng.uniform() < p1 ? 1.0 : -1.0;
                }
                x = B_ * h + b_ + rng.normal_vec(D);
            }
            X.row(i) = x.transpose();
        }
        return X;
    }

    Matrix sample(Eigen::Index n, std::uint64_t seed) const override {
        return sample_gibbs(n, 2000, seed);
    }

    json to_json() const override {
        json jB = json::array();
        for (Eigen::Index i = 0; i < B_.rows(); ++i)
            jB.push_back(std::vector<double>(B_.row(i).begin(), B_.row(i).end()));
        return {{"type", "rbm"}, {"dim", dim()}, {"hidden", hidden_dim()}, {"B", jB},
                {"b", std::vector<double>(b_.begin(), b_.end())},
                {"c", std::vector<double>(c_.begin(), c_.end())}};
    }

    const Matrix& B() const { return B_; }
    const Vector& b() const { return b_; }
    const Vector& c() const { return c_; }

private:
    Matrix B_;
    Vector b_, c_;
};

// ---------------------------------------------------------------------------
// ICA: x = W z with z from a joint multivariate-t.
//   log p(x) = log p_z(W^-1 x) - log |det W|
//   s_p(x)   = W^-T s_z(W^-1 x)
// ---------------------------------------------------------------------------

class IcaModel final : public ScoreModel {
public:
    IcaModel(Matrix W, double nu) : W_(std::move(W)), base_(static_cast<int>(W_.rows()), nu, /*joint=*/true) {
        require(W_.rows() == W_.cols(), "IcaModel: W must be square");
        Eigen::JacobiSVD<Matrix> svd(W_);
        const double smin = svd.singularValues()(svd.singularValues().size() - 1);
        require(smin > 0.0 && svd.singularValues()(0) / smin < 1e12, "IcaModel: W is singular");
        Winv_ = W_.inverse();
        log_abs_det_ = Eigen::HouseholderQR<Matrix>(W_).logAbsDeterminant();
    }

    int dim() const override { return static_cast<int>(W_.rows()); }
    bool has_logp() const override { return true; }
    bool has_score_jacobian() const override { return true; }
    bool has_sampler() const override { return true; }

    double logp(const Vector& x) const override { return base_.logp(Winv_ * x) - log_abs_det_; }

    Vector score(const Vector& x) const override {
        return Winv_.transpose() * base_.score(Winv_ * x);
    }

    Matrix score_matrix(const Matrix& X) const override {
        return base_.score_matrix(X * Winv_.transpose()) * Winv_;
    }

    Matrix score_jacobian(const Vector& x) const override {
        return Winv_.transpose() * base_.score_jacobian(Winv_ * x) * Winv_;
    }

    Vector score_jacobian_vp(const Vector& x, const Vector& v) const override {
        return Winv_.transpose() * base_.score_jacobian_vp(Winv_ * x, Winv_ * v);
    }

    Matrix sample(Eigen::Index n, std::uint64_t seed) const override {
        return base_.sample(n, seed) * W_.transpose();
    }

    json to_json() const override {
        json jW = json::array();
        for (Eigen::Index i = 0; i < W_.rows(); ++i)
            jW.push_back(std::vector<double>(W_.row(i).begin(), W_.row(i).end()));
        return {{"type", "ica"}, {"dim", dim()}, {"nu", base_.nu()}, {"W", jW}};
    }

    const Matrix& W() const { return W_; }
    const Matrix& W_inv() const { return Winv_; }
    double nu() const { return base_.nu(); }
    double log_abs_det() const { return log_abs_det_; }

private:
    Matrix W_;
    StudentTModel base_;
    Matrix Winv_;
    double log_abs_det_;
};

inline double ica_logp(const Vector& x, const Matrix& W, double nu) { return IcaModel(W, nu).logp(x); }
inline Vector ica_score(const Vector& x, const Matrix& W, double nu) { return IcaModel(W, nu).score(x); }

// ---------------------------------------------------------------------------
// JSON round trip
// ---------------------------------------------------------------------------

inline Matrix matrix_from_json(const json& j) {
    const auto rows = j.size();
    require(rows > 0, "matrix_from_json: empty matrix");
    const auto cols = j.at(0).size();
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        require(j.at(i).size() == cols, "matrix_from_json: ragged rows");
        for (std::size_t k = 0; k < cols; ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = j.at(i).at(k).get<double>();
    }
    return m;
}

inline Vector vector_from_json(const json& j) {
    Vector v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j.at(i).get<double>();
    return v;
}

inline ModelPtr model_from_json(const json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "gaussian")
        return std::make_shared<GaussianModel>(vector_from_json(j.at("mean")), vector_from_json(j.at("var_diag")));
    if (type == "laplace")
        return std::make_shared<LaplaceModel>(j.at("dim").get<int>(), j.at("scale").get<double>());
    if (type == "mvt")
        return std::make_shared<StudentTModel>(j.at("dim").get<int>(), j.at("nu").get<double>(),
                                               j.at("joint").get<bool>());
    if (type == "rbm")
        return std::make_shared<RbmModel>(matrix_from_json(j.at("B")), vector_from_json(j.at("b")),
                                          vector_from_json(j.at("c")));
    if (type == "ica")
        return std::make_shared<IcaModel>(matrix_from_json(j.at("W")), j.at("nu").get<double>());
    throw std::invalid_argument("model_from_json: unknown type '" + type + "'");
}

}  // namespace sksd
