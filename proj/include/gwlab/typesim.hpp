#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gwlab/gray_wyner.hpp"

namespace gwlab {

using Sequence = std::vector<std::uint8_t>;

struct CoveringConstants {
    std::size_t w_size = 0;
    double c0 = 0.0;
    double c0_prime = 0.0;
    double c1 = 0.0;
    double c2 = 0.0;
};

// Constants for the given auxiliary alphabet size.
CoveringConstants covering_constants(std::size_t w_size, const DistortionMeasure& dx, const DistortionMeasure& dy,
                                     std::size_t nx, std::size_t ny);

// Blocklength preconditions of the covering lemma; small-n runs usually fall outside.
struct LemmaRegime {
    bool type_count = false;
    bool x_distortion = false;
    bool y_distortion = false;
    bool reproduction = false;
    bool inside() const { return type_count && x_distortion && y_distortion && reproduction; }
};
LemmaRegime lemma_regime(std::size_t n, std::size_t w_size, const DistortionMeasure& dx, const DistortionMeasure& dy,
                         std::size_t nx, std::size_t ny, double d1, double d2);

// Joint type with denominator n over X x Y, counts in row-major order.
struct JointTypeCounts {
    std::size_t nx = 0;
    std::size_t ny = 0;
    std::vector<int> counts;
    int n() const;
    JointPmf pmf() const;
};

std::vector<JointTypeCounts> enumerate_joint_types(std::size_t nx, std::size_t ny, std::size_t n);

// Conditional type over W given each (x,y) cell: counts[cell * nw + w] sum to the cell count.
struct ConditionalType {
    std::size_t nw = 0;
    std::vector<int> counts;
    // max over cells with positive count of n_xy |Q(w|xy) - P(w|xy)|; at most 1 by construction.
    double max_scaled_deviation = 0.0;
    std::vector<int> w_counts() const;
};

// Largest-remainder rounding of the channel's W|XY rows to the type's cell counts.
ConditionalType quantize_channel(const JointTypeCounts& type, const TestChannelTriple& channel);

struct CoverOptions {
    std::uint64_t seed = 0x636f'7665'72ULL;
    // Random candidates tried per greedy step.
    int candidates = 16;
    // Type classes up to this size are enumerated and covered exhaustively.
    std::size_t exhaustive_limit = std::size_t{1} << 18;
    // Sampled covering: rounds of fresh certification samples before giving up.
    int random_attempts = 100;
    std::size_t certification_samples = 2000;
};

struct CoverageReport {
    bool exhaustive = false;
    // Items checked (the whole class when exhaustive, otherwise the last certification sample).
    std::size_t checked = 0;
    std::size_t uncovered = 0;
    bool complete() const { return uncovered == 0; }
};

struct CommonCover {
    ConditionalType w_type;
    std::vector<Sequence> cloud;
    CoverageReport coverage;
};

// Cloud for one joint type: every (x^n, y^n) in the class gets a w^n of the quantized joint type.
CommonCover cover_common(const JointTypeCounts& type, const ConditionalType& w_type, const CoverOptions& opts = {});
// Solves the least common rate at `levels` first; throws Error(infeasible) when it is infinite.
CommonCover cover_common(const JointTypeCounts& type, const GWLevels& levels, const DistortionMeasure& dx,
                         const DistortionMeasure& dy, const CoverOptions& opts = {}, const GWOptions& gw = {});

struct SatelliteCover {
    std::vector<Sequence> codewords;
    CoverageReport coverage;
    // Largest per-letter distortion needed by a covered sequence.
    double max_distortion = 0.0;
    // Shrunken level D - |X||W||X^| dmax / n used by the covering argument; reported only.
    double shrunk_level = 0.0;
    // log2|B|/n <= rate_budget
    bool within_budget = false;
};

// Reproductions for every x^n whose joint type with w_n has counts xw_counts (|X| x |W|, row-major).
SatelliteCover cover_conditional(const Sequence& w_n, std::size_t nw, const std::vector<int>& xw_counts,
                                 const DistortionMeasure& d, double D, double rate_budget,
                                 const CoverOptions& opts = {});

enum class RateBackoff {
    // Rates lose c_i log(n)/n (c0' log(n+1)/n for the common link) before the type test.
    lemma,
    // Rates are log2(M_i)/n.
    none,
};

struct CodeBudgets {
    // log2 of the message set sizes.
    double log2_m0 = 0.0;
    double log2_m1 = 0.0;
    double log2_m2 = 0.0;
    RateBackoff backoff = RateBackoff::lemma;
};

struct EffectiveRates {
    double r0 = 0.0;
    double r1 = 0.0;
    double r2 = 0.0;
};

EffectiveRates effective_rates(std::size_t n, const CodeBudgets& budgets, const CoveringConstants& constants);

struct TypeClassification {
    // Least common rate of the type, or a lower bound when `bound_only`.
    double r0 = 0.0;
    bool bound_only = false;
    bool error = false;
};

// Error when the least common rate at (r1, r2, d1, d2) exceeds r0 by more than 1e-9.
TypeClassification classify_type(const JointSource& type_source, const EffectiveRates& rates, double d1, double d2,
                                 const GWOptions& gw = {});

struct TypeCode {
    JointTypeCounts type;
    TypeClassification classification;
    ConditionalType w_type;
    std::vector<Sequence> cloud;
    // Satellites for the canonical (sorted) cloud word; other words use them through the sorting permutation.
    std::vector<Sequence> sat_x;
    std::vector<Sequence> sat_y;
    bool covered = false;
    bool size_bounds_hold = false;
    bool within_budget = false;
};

struct CoverCode {
    std::size_t n = 0;
    std::size_t nx = 0, ny = 0, kx = 0, ky = 0;
    double d1 = 0.0;
    double d2 = 0.0;
    DistortionMeasure dx;
    DistortionMeasure dy;
    CodeBudgets budgets;
    EffectiveRates rates;
    // With |W| = |X||Y|+2, and with the largest pruned |W| actually used.
    CoveringConstants constants;
    CoveringConstants constants_pruned;
    LemmaRegime regime;
    std::vector<TypeCode> types;

    // Index into `types` of the joint type with these counts.
    std::size_t type_index(const std::vector<int>& counts) const;
    std::size_t error_types() const;
    // Rebuilds the counts-to-index lookup after `types` changes.
    void index_types();

  private:
    std::map<std::vector<int>, std::size_t> index_;
};

struct BuildOptions {
    CoverOptions cover;
    GWOptions gw = [] {
        GWOptions o;
        o.restarts = 0;
        return o;
    }();
    unsigned threads = 1;
};

// One code per joint type of length n; error types get no codebooks.
CoverCode build_code(std::size_t n, const CodeBudgets& budgets, const DistortionMeasure& dx,
                     const DistortionMeasure& dy, double d1, double d2, const BuildOptions& opts = {});

struct EncodeResult {
    bool excess = false;
    // "error-type", "uncovered", "distortion" or empty.
    std::string reason;
    Sequence w;
    Sequence xhat;
    Sequence yhat;
};

EncodeResult encode(const CoverCode& code, const std::vector<int>& x, const std::vector<int>& y);

struct SimulationReport {
    std::size_t trials = 0;
    std::size_t failures = 0;
    std::size_t error_type_failures = 0;
    std::size_t uncovered_failures = 0;
    std::size_t distortion_failures = 0;
    double estimate = 0.0;
    double wilson_low = 0.0;
    double wilson_high = 0.0;
    std::uint64_t seed = 0;
};

// 95% Wilson score interval.
std::pair<double, double> wilson_interval(std::size_t successes, std::size_t trials);

// Trial t draws its block from stream (seed, t), so results do not depend on the thread count.
SimulationReport simulate_excess(const CoverCode& code, const JointPmf& p_xy, std::size_t trials, std::uint64_t seed,
                                 unsigned threads = 1);

// Probability under p_xy^n of the types classified as errors at the given rates.
// Throws Error(budget) beyond four cells or n > 40.
double exact_type_tail(const JointSource& src, std::size_t n, const EffectiveRates& rates, double d1, double d2,
                       const GWOptions& gw = [] {
                           GWOptions o;
                           o.restarts = 0;
                           return o;
                       }());
// Same sum using a built code's stored classifications.
double exact_type_tail(const CoverCode& code, const JointPmf& p_xy);

// Binary container: "GWLC", version, header, per-type offset table, bit-packed symbol arrays.
std::vector<std::uint8_t> serialize_code(const CoverCode& code);
CoverCode deserialize_code(const std::vector<std::uint8_t>& bytes);
void write_code(const CoverCode& code, const std::string& path);
CoverCode read_code(const std::string& path);

}  // namespace gwlab
