#include "gwlab/probcore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/special_functions/erf.hpp>
#include <json.hpp>

namespace gwlab {

namespace {

void check_entries(const std::vector<double>& v, const char* what) {
    double sum = 0.0;
    for (double x : v) {
        if (!(x >= 0.0) || !std::isfinite(x)) {
            throw Error(ErrorCode::domain, std::string(what) + ": negative or non-finite entry");
        }
        sum += x;
    }
    if (std::fabs(sum - 1.0) > kPmfTolerance) {
        std::ostringstream os;
        os.precision(17);
        os << what << ": entries sum to " << sum << ", not 1";
        throw Error(ErrorCode::domain, os.str());
    }
}

std::vector<double> normalized(std::vector<double> w, const char* what) {
    double sum = 0.0;
    for (double x : w) {
        if (!(x >= 0.0) || !std::isfinite(x)) {
            throw Error(ErrorCode::domain, std::string(what) + ": negative or non-finite weight");
        }
        sum += x;
    }
    if (!(sum > 0.0)) throw Error(ErrorCode::domain, std::string(what) + ": zero total weight");
    for (double& x : w) x /= sum;
    return w;
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) throw Error(ErrorCode::shape, "matrix data size mismatch");
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return Matrix();
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != m.cols()) throw Error(ErrorCode::shape, "ragged matrix rows");
        std::copy(rows[r].begin(), rows[r].end(), m.data_.begin() + static_cast<long>(r * m.cols()));
    }
    return m;
}

std::vector<double> Matrix::row(std::size_t r) const {
    return std::vector<double>(data_.begin() + static_cast<long>(r * cols_),
                               data_.begin() + static_cast<long>((r + 1) * cols_));
}

Pmf::Pmf(std::vector<double> probs) : probs_(std::move(probs)) {
    if (probs_.empty()) throw Error(ErrorCode::domain, "pmf: empty alphabet");
    check_entries(probs_, "pmf");
}

Pmf Pmf::normalize(std::vector<double> weights) { return Pmf(normalized(std::move(weights), "pmf")); }

Pmf Pmf::uniform(std::size_t size) {
    if (size == 0) throw Error(ErrorCode::domain, "pmf: empty alphabet");
    return Pmf(std::vector<double>(size, 1.0 / static_cast<double>(size)));
}

JointPmf::JointPmf(Matrix probs) : probs_(std::move(probs)) {
    if (probs_.rows() == 0 || probs_.cols() == 0) throw Error(ErrorCode::domain, "joint pmf: empty alphabet");
    check_entries(probs_.data(), "joint pmf");
}

JointPmf JointPmf::normalize(Matrix weights) {
    const std::size_t r = weights.rows();
    const std::size_t c = weights.cols();
    return JointPmf(Matrix(r, c, normalized(std::move(weights.data()), "joint pmf")));
}

Pmf JointPmf::marginal_x() const {
    std::vector<double> m(nx(), 0.0);
    for (std::size_t x = 0; x < nx(); ++x)
        for (std::size_t y = 0; y < ny(); ++y) m[x] += probs_(x, y);
    return Pmf::normalize(std::move(m));
}

Pmf JointPmf::marginal_y() const {
    std::vector<double> m(ny(), 0.0);
    for (std::size_t x = 0; x < nx(); ++x)
        for (std::size_t y = 0; y < ny(); ++y) m[y] += probs_(x, y);
    return Pmf::normalize(std::move(m));
}

std::vector<std::pair<std::size_t, std::size_t>> JointPmf::support() const {
    std::vector<std::pair<std::size_t, std::size_t>> s;
    for (std::size_t x = 0; x < nx(); ++x)
        for (std::size_t y = 0; y < ny(); ++y)
            if (probs_(x, y) > 0.0) s.emplace_back(x, y);
    return s;
}

DistortionMeasure::DistortionMeasure(Matrix m) : m_(std::move(m)) {
    if (m_.rows() == 0 || m_.cols() == 0) throw Error(ErrorCode::domain, "distortion: empty alphabet");
    d_max_ = 0.0;
    d_min_pos_ = std::numeric_limits<double>::infinity();
    for (std::size_t x = 0; x < m_.rows(); ++x) {
        bool has_zero = false;
        for (std::size_t xh = 0; xh < m_.cols(); ++xh) {
            const double v = m_(x, xh);
            if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorCode::domain, "distortion: negative or non-finite entry");
            if (v == 0.0) has_zero = true;
            if (v > 0.0) d_min_pos_ = std::min(d_min_pos_, v);
            d_max_ = std::max(d_max_, v);
        }
        if (!has_zero) throw Error(ErrorCode::domain, "distortion: source letter without a zero-distortion reproduction");
    }
    if (!std::isfinite(d_min_pos_)) d_min_pos_ = 0.0;
}

DistortionMeasure DistortionMeasure::hamming(std::size_t size) {
    Matrix m(size, size, 1.0);
    for (std::size_t i = 0; i < size; ++i) m(i, i) = 0.0;
    return DistortionMeasure(std::move(m));
}

double xlog2x(double x) { return x > 0.0 ? x * std::log2(x) : 0.0; }

double entropy(const Pmf& p) {
    double h = 0.0;
    for (double v : p.probs()) h -= xlog2x(v);
    return std::max(h, 0.0);
}

double binary_entropy(double delta) {
    if (!(delta >= 0.0 && delta <= 1.0)) throw Error(ErrorCode::domain, "binary_entropy: argument outside [0,1]");
    return -xlog2x(delta) - xlog2x(1.0 - delta);
}

double kl_divergence(const Pmf& q, const Pmf& p) {
    if (q.size() != p.size()) throw Error(ErrorCode::shape, "kl_divergence: alphabet size mismatch");
    double d = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (q[i] <= 0.0) continue;
        if (p[i] <= 0.0) throw Error(ErrorCode::support, "kl_divergence: q has mass outside supp(p)");
        d += q[i] * std::log2(q[i] / p[i]);
    }
    return std::max(d, 0.0);
}

double kl_divergence(const JointPmf& q, const JointPmf& p) {
    if (q.nx() != p.nx() || q.ny() != p.ny()) throw Error(ErrorCode::shape, "kl_divergence: shape mismatch");
    return kl_divergence(q.flat(), p.flat());
}

double mutual_information(const JointPmf& j) {
    const Pmf px = j.marginal_x();
    const Pmf py = j.marginal_y();
    double i = 0.0;
    for (std::size_t x = 0; x < j.nx(); ++x)
        for (std::size_t y = 0; y < j.ny(); ++y) {
            const double v = j(x, y);
            if (v > 0.0) i += v * std::log2(v / (px[x] * py[y]));
        }
    return std::max(i, 0.0);
}

double conditional_mutual_information(const Pmf& pw, const Matrix& px_given_w,
                                      const std::vector<Matrix>& pxhat_given_xw) {
    if (px_given_w.rows() != pw.size() || pxhat_given_xw.size() != pw.size())
        throw Error(ErrorCode::shape, "conditional_mutual_information: |W| mismatch");
    double total = 0.0;
    for (std::size_t w = 0; w < pw.size(); ++w) {
        const Matrix& ch = pxhat_given_xw[w];
        if (ch.rows() != px_given_w.cols()) throw Error(ErrorCode::shape, "conditional_mutual_information: |X| mismatch");
        if (pw[w] <= 0.0) continue;
        std::vector<double> out(ch.cols(), 0.0);
        for (std::size_t x = 0; x < ch.rows(); ++x)
            for (std::size_t xh = 0; xh < ch.cols(); ++xh) out[xh] += px_given_w(w, x) * ch(x, xh);
        double iw = 0.0;
        for (std::size_t x = 0; x < ch.rows(); ++x) {
            const double px = px_given_w(w, x);
            if (px <= 0.0) continue;
            for (std::size_t xh = 0; xh < ch.cols(); ++xh) {
                const double c = ch(x, xh);
                if (px * c > 0.0 && out[xh] > 0.0) iw += px * c * std::log2(c / out[xh]);
            }
        }
        total += pw[w] * iw;
    }
    return std::max(total, 0.0);
}

double q_function(double t) { return 0.5 * std::erfc(t / std::sqrt(2.0)); }

double log2_q_function(double t) {
    if (t < 30.0) return std::log2(q_function(t));
    // Q(t) = phi(t) / (t + 1/(t + 2/(t + 3/(t + ...)))), evaluated from the tail.
    double cf = t;
    for (int k = 200; k >= 1; --k) cf = t + k / cf;
    return -0.5 * t * t * kLog2E - 0.5 * std::log2(2.0 * M_PI) - std::log2(cf);
}

double q_inverse(double eps) {
    if (!(eps > 0.0 && eps < 1.0)) throw Error(ErrorCode::domain, "q_inverse: argument outside (0,1)");
    return std::sqrt(2.0) * boost::math::erfc_inv(2.0 * eps);
}

JointPmf empirical_type(const std::vector<int>& x_seq, const std::vector<int>& y_seq, std::size_t nx,
                        std::size_t ny) {
    if (x_seq.size() != y_seq.size()) throw Error(ErrorCode::shape, "empirical_type: length mismatch");
    if (x_seq.empty()) throw Error(ErrorCode::domain, "empirical_type: empty sequences");
    Matrix counts(nx, ny, 0.0);
    for (std::size_t i = 0; i < x_seq.size(); ++i) {
        const int x = x_seq[i];
        const int y = y_seq[i];
        if (x < 0 || y < 0 || static_cast<std::size_t>(x) >= nx || static_cast<std::size_t>(y) >= ny)
            throw Error(ErrorCode::domain, "empirical_type: symbol outside alphabet");
        counts(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) += 1.0;
    }
    const double n = static_cast<double>(x_seq.size());
    for (double& c : counts.data()) c /= n;
    return JointPmf::normalize(std::move(counts));
}

JointPmf empirical_type(const std::vector<int>& x_seq, const std::vector<int>& y_seq) {
    if (x_seq.size() != y_seq.size()) throw Error(ErrorCode::shape, "empirical_type: length mismatch");
    if (x_seq.empty()) throw Error(ErrorCode::domain, "empirical_type: empty sequences");
    const int mx = *std::max_element(x_seq.begin(), x_seq.end());
    const int my = *std::max_element(y_seq.begin(), y_seq.end());
    return empirical_type(x_seq, y_seq, static_cast<std::size_t>(mx) + 1, static_cast<std::size_t>(my) + 1);
}

SortedSupport sorted_support(const JointPmf& j) {
    SortedSupport s;
    s.pairs = j.support();
    std::stable_sort(s.pairs.begin(), s.pairs.end(), [&](const auto& a, const auto& b) {
        return j(a.first, a.second) > j(b.first, b.second);
    });
    for (const auto& [x, y] : s.pairs) s.probs.push_back(j(x, y));
    s.m = s.pairs.size();
    return s;
}

namespace {

Matrix json_matrix(const nlohmann::json& doc, const char* key) {
    if (!doc.contains(key)) throw Error(ErrorCode::schema, std::string("source model: missing field '") + key + "'");
    const auto& arr = doc.at(key);
    if (!arr.is_array() || arr.empty()) throw Error(ErrorCode::schema, std::string("source model: '") + key + "' must be a non-empty 2-D array");
    std::vector<std::vector<double>> rows;
    for (const auto& r : arr) {
        if (!r.is_array() || r.empty()) throw Error(ErrorCode::schema, std::string("source model: '") + key + "' must be a non-empty 2-D array");
        std::vector<double> row;
        for (const auto& v : r) {
            if (!v.is_number()) throw Error(ErrorCode::schema, std::string("source model: non-numeric entry in '") + key + "'");
            const double d = v.get<double>();
            if (d < 0.0) throw Error(ErrorCode::schema, std::string("source model: negative entry in '") + key + "'");
            row.push_back(d);
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw Error(ErrorCode::schema, std::string("source model: ragged rows in '") + key + "'");
        rows.push_back(std::move(row));
    }
    return Matrix::from_rows(rows);
}

}  // namespace

JointSource parse_source_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::schema, std::string("source model: invalid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw Error(ErrorCode::schema, "source model: top level must be an object");
    Matrix p = json_matrix(doc, "px_y");
    Matrix dx = json_matrix(doc, "dx");
    Matrix dy = json_matrix(doc, "dy");
    const double sum = std::accumulate(p.data().begin(), p.data().end(), 0.0);
    if (std::fabs(sum - 1.0) > 1e-9) throw Error(ErrorCode::schema, "source model: px_y does not sum to 1 within 1e-9");
    if (dx.rows() != p.rows()) throw Error(ErrorCode::schema, "source model: dx needs one row per X letter");
    if (dy.rows() != p.cols()) throw Error(ErrorCode::schema, "source model: dy needs one row per Y letter");
    try {
        return JointSource{JointPmf::normalize(std::move(p)), DistortionMeasure(std::move(dx)),
                           DistortionMeasure(std::move(dy))};
    } catch (const Error& e) {
        throw Error(ErrorCode::schema, std::string("source model: ") + e.what());
    }
}

JointSource load_source(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io, "cannot open source model '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_source_json(ss.str());
}

JointSource dsbs_source(double p) {
    if (!(p >= 0.0 && p <= 0.5)) throw Error(ErrorCode::domain, "dsbs: crossover outside [0,1/2]");
    Matrix m(2, 2);
    m(0, 0) = m(1, 1) = (1.0 - p) / 2.0;
    m(0, 1) = m(1, 0) = p / 2.0;
    return JointSource{JointPmf(std::move(m)), DistortionMeasure::hamming(2), DistortionMeasure::hamming(2)};
}

}  // namespace gwlab
