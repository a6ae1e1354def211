#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gwlab {

enum class ErrorCode {
    domain,
    infeasible,
    support,
    shape,
    schema,
    io,
    convergence,
    budget,
};

class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

  private:
    ErrorCode code_;
};

inline constexpr double kLog2E = 1.4426950408889634074;
inline constexpr double kPmfTolerance = 1e-12;

// Dense row-major matrix of doubles.
class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    static Matrix from_rows(const std::vector<std::vector<double>>& rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    const std::vector<double>& data() const noexcept { return data_; }
    std::vector<double>& data() noexcept { return data_; }
    std::vector<double> row(std::size_t r) const;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

class Pmf {
  public:
    Pmf() = default;
    // Throws Error(domain) on negative entries or a sum off by more than kPmfTolerance.
    explicit Pmf(std::vector<double> probs);
    static Pmf normalize(std::vector<double> weights);
    static Pmf uniform(std::size_t size);

    std::size_t size() const noexcept { return probs_.size(); }
    double operator[](std::size_t i) const { return probs_[i]; }
    const std::vector<double>& probs() const noexcept { return probs_; }

  private:
    std::vector<double> probs_;
};

class JointPmf {
  public:
    JointPmf() = default;
    explicit JointPmf(Matrix probs);
    static JointPmf normalize(Matrix weights);

    std::size_t nx() const noexcept { return probs_.rows(); }
    std::size_t ny() const noexcept { return probs_.cols(); }
    double operator()(std::size_t x, std::size_t y) const { return probs_(x, y); }
    const Matrix& matrix() const noexcept { return probs_; }
    Pmf marginal_x() const;
    Pmf marginal_y() const;
    Pmf flat() const { return Pmf(probs_.data()); }
    // Strictly positive cells in row-major order.
    std::vector<std::pair<std::size_t, std::size_t>> support() const;

  private:
    Matrix probs_;
};

class DistortionMeasure {
  public:
    DistortionMeasure() = default;
    // Rows are source letters, columns reproduction letters. Every row needs a zero entry.
    explicit DistortionMeasure(Matrix m);
    static DistortionMeasure hamming(std::size_t size);

    std::size_t sources() const noexcept { return m_.rows(); }
    std::size_t reproductions() const noexcept { return m_.cols(); }
    double operator()(std::size_t x, std::size_t xh) const { return m_(x, xh); }
    const Matrix& matrix() const noexcept { return m_; }
    double d_max() const noexcept { return d_max_; }
    double d_min_positive() const noexcept { return d_min_pos_; }

  private:
    Matrix m_;
    double d_max_ = 0.0;
    double d_min_pos_ = 0.0;
};

struct SortedSupport {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::vector<double> probs;
    std::size_t m = 0;
};

// A source model: joint pmf and one distortion measure per component.
struct JointSource {
    JointPmf pxy;
    DistortionMeasure dx;
    DistortionMeasure dy;
};

double xlog2x(double x);
double entropy(const Pmf& p);
double binary_entropy(double delta);
double kl_divergence(const Pmf& q, const Pmf& p);
double kl_divergence(const JointPmf& q, const JointPmf& p);
double mutual_information(const JointPmf& j);
// px_given_w: |W| x |X|; pxhat_given_xw[w]: |X| x |X^|.
double conditional_mutual_information(const Pmf& pw, const Matrix& px_given_w,
                                      const std::vector<Matrix>& pxhat_given_xw);

double q_function(double t);
// log2 of q_function, accurate far into the upper tail where q_function underflows.
double log2_q_function(double t);
double q_inverse(double eps);

JointPmf empirical_type(const std::vector<int>& x_seq, const std::vector<int>& y_seq,
                        std::size_t nx, std::size_t ny);
JointPmf empirical_type(const std::vector<int>& x_seq, const std::vector<int>& y_seq);
SortedSupport sorted_support(const JointPmf& j);

JointSource parse_source_json(const std::string& text);
JointSource load_source(const std::string& path);
JointSource dsbs_source(double p);

}  // namespace gwlab
