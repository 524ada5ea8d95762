#pragma once

#include "enercast/errors.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace enercast::ad {

class Tape;

/// Scalar bound to a node on one tape. Mixing scalars from different tapes
/// throws; values are cached so reads never touch the tape.
class DiffScalar {
  public:
    DiffScalar() = default;
    DiffScalar(Tape* tape, std::int32_t id, double value) : tape_(tape), id_(id), value_(value) {}

    double value() const { return value_; }
    std::int32_t id() const { return id_; }
    Tape* tape() const { return tape_; }

  private:
    Tape* tape_ = nullptr;
    std::int32_t id_ = -1;
    double value_ = 0.0;
};

/// Append-only computation record: per node, up to two parent ids and the
/// local partials with respect to them. Parents always precede children, so a
/// single reverse sweep accumulates exact adjoints.
class Tape {
  public:
    DiffScalar leaf(double value) { return push(-1, -1, 0.0, 0.0, value); }
    DiffScalar constant(double value) { return leaf(value); }

    std::vector<DiffScalar> leaves(std::span<const double> values) {
        std::vector<DiffScalar> out;
        out.reserve(values.size());
        for (double v : values) out.push_back(leaf(v));
        return out;
    }

    std::size_t size() const { return p0_.size(); }

    void clear() {
        p0_.clear();
        p1_.clear();
        d0_.clear();
        d1_.clear();
    }

    void reserve(std::size_t n) {
        p0_.reserve(n);
        p1_.reserve(n);
        d0_.reserve(n);
        d1_.reserve(n);
    }

    /// Adjoints of every node with respect to `root`; nodes not reachable
    /// from the root get 0. Read entries at leaf ids for gradients.
    std::vector<double> backward(const DiffScalar& root) const {
        require_mine(root);
        std::vector<double> adj(size(), 0.0);
        adj[static_cast<std::size_t>(root.id())] = 1.0;
        for (std::int32_t i = root.id(); i >= 0; --i) {
            const double a = adj[static_cast<std::size_t>(i)];
            if (a == 0.0) continue;
            const std::int32_t q0 = p0_[static_cast<std::size_t>(i)];
            if (q0 >= 0) {
                adj[static_cast<std::size_t>(q0)] += d0_[static_cast<std::size_t>(i)] * a;
                const std::int32_t q1 = p1_[static_cast<std::size_t>(i)];
                if (q1 >= 0) adj[static_cast<std::size_t>(q1)] += d1_[static_cast<std::size_t>(i)] * a;
            }
        }
        return adj;
    }

    DiffScalar push(std::int32_t p0, std::int32_t p1, double d0, double d1, double value) {
        const auto id = static_cast<std::int32_t>(p0_.size());
        p0_.push_back(p0);
        p1_.push_back(p1);
        d0_.push_back(d0);
        d1_.push_back(d1);
        return DiffScalar(this, id, value);
    }

    void require_mine(const DiffScalar& x) const {
        if (x.tape() != this) {
            throw EvaluationError("DiffScalar does not belong to this tape");
        }
    }

  private:
    std::vector<std::int32_t> p0_, p1_;
    std::vector<double> d0_, d1_;
};

namespace detail {
inline Tape& common_tape(const DiffScalar& a, const DiffScalar& b) {
    if (a.tape() == nullptr || a.tape() != b.tape()) {
        throw EvaluationError("operands live on different tapes");
    }
    return *a.tape();
}
inline Tape& tape_of(const DiffScalar& a) {
    if (a.tape() == nullptr) {
        throw EvaluationError("DiffScalar is not bound to a tape");
    }
    return *a.tape();
}
[[noreturn]] inline void domain_error(const char* op, const DiffScalar& x) {
    throw EvaluationError(std::string(op) + " domain violation at node " +
                          std::to_string(x.id()) + " (value " + std::to_string(x.value()) + ")");
}
}  // namespace detail

inline DiffScalar operator+(const DiffScalar& a, const DiffScalar& b) {
    return detail::common_tape(a, b).push(a.id(), b.id(), 1.0, 1.0, a.value() + b.value());
}
inline DiffScalar operator-(const DiffScalar& a, const DiffScalar& b) {
    return detail::common_tape(a, b).push(a.id(), b.id(), 1.0, -1.0, a.value() - b.value());
}
inline DiffScalar operator*(const DiffScalar& a, const DiffScalar& b) {
    return detail::common_tape(a, b).push(a.id(), b.id(), b.value(), a.value(),
                                          a.value() * b.value());
}
inline DiffScalar operator/(const DiffScalar& a, const DiffScalar& b) {
    Tape& t = detail::common_tape(a, b);
    if (b.value() == 0.0) detail::domain_error("divide", b);
    const double inv = 1.0 / b.value();
    return t.push(a.id(), b.id(), inv, -a.value() * inv * inv, a.value() * inv);
}
inline DiffScalar operator-(const DiffScalar& a) {
    return detail::tape_of(a).push(a.id(), -1, -1.0, 0.0, -a.value());
}

inline DiffScalar operator+(const DiffScalar& a, double c) {
    return detail::tape_of(a).push(a.id(), -1, 1.0, 0.0, a.value() + c);
}
inline DiffScalar operator+(double c, const DiffScalar& a) { return a + c; }
inline DiffScalar operator-(const DiffScalar& a, double c) { return a + (-c); }
inline DiffScalar operator-(double c, const DiffScalar& a) {
    return detail::tape_of(a).push(a.id(), -1, -1.0, 0.0, c - a.value());
}
inline DiffScalar operator*(const DiffScalar& a, double c) {
    return detail::tape_of(a).push(a.id(), -1, c, 0.0, a.value() * c);
}
inline DiffScalar operator*(double c, const DiffScalar& a) { return a * c; }
inline DiffScalar operator/(const DiffScalar& a, double c) { return a * (1.0 / c); }
inline DiffScalar operator/(double c, const DiffScalar& a) {
    if (a.value() == 0.0) detail::domain_error("divide", a);
    const double inv = 1.0 / a.value();
    return detail::tape_of(a).push(a.id(), -1, -c * inv * inv, 0.0, c * inv);
}

inline DiffScalar exp(const DiffScalar& a) {
    const double v = std::exp(a.value());
    return detail::tape_of(a).push(a.id(), -1, v, 0.0, v);
}
inline DiffScalar log(const DiffScalar& a) {
    if (!(a.value() > 0.0)) detail::domain_error("log", a);
    return detail::tape_of(a).push(a.id(), -1, 1.0 / a.value(), 0.0, std::log(a.value()));
}
inline DiffScalar sqrt(const DiffScalar& a) {
    if (!(a.value() > 0.0)) detail::domain_error("sqrt", a);
    const double v = std::sqrt(a.value());
    return detail::tape_of(a).push(a.id(), -1, 0.5 / v, 0.0, v);
}
inline DiffScalar sin(const DiffScalar& a) {
    return detail::tape_of(a).push(a.id(), -1, std::cos(a.value()), 0.0, std::sin(a.value()));
}
inline DiffScalar cos(const DiffScalar& a) {
    return detail::tape_of(a).push(a.id(), -1, -std::sin(a.value()), 0.0, std::cos(a.value()));
}
/// Subgradient 0 at the kink.
inline DiffScalar abs(const DiffScalar& a) {
    const double d = a.value() > 0.0 ? 1.0 : (a.value() < 0.0 ? -1.0 : 0.0);
    return detail::tape_of(a).push(a.id(), -1, d, 0.0, std::abs(a.value()));
}
inline DiffScalar square(const DiffScalar& a) {
    return detail::tape_of(a).push(a.id(), -1, 2.0 * a.value(), 0.0, a.value() * a.value());
}

inline double softplus_value(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
inline double sigmoid_value(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}
inline DiffScalar softplus(const DiffScalar& a) {
    return detail::tape_of(a).push(a.id(), -1, sigmoid_value(a.value()), 0.0,
                                   softplus_value(a.value()));
}

/// floor + softness * softplus((x - floor)/softness): identity for
/// x >> floor, smoothly clamped to stay above the floor.
inline double softplus_floor_value(double x, double floor_v, double softness) {
    return floor_v + softness * softplus_value((x - floor_v) / softness);
}
inline DiffScalar softplus_floor(const DiffScalar& a, double floor_v, double softness) {
    const double t = (a.value() - floor_v) / softness;
    return detail::tape_of(a).push(a.id(), -1, sigmoid_value(t), 0.0,
                                   softplus_floor_value(a.value(), floor_v, softness));
}

double digamma_value(double x);

inline DiffScalar lgamma(const DiffScalar& a) {
    if (!(a.value() > 0.0)) detail::domain_error("lgamma", a);
    return detail::tape_of(a).push(a.id(), -1, digamma_value(a.value()), 0.0,
                                   std::lgamma(a.value()));
}

/// 1 if x > 0 else 0, with zero gradient: threshold conditions are data,
/// never optimization variables.
inline DiffScalar indicator_positive(const DiffScalar& a) {
    return detail::tape_of(a).push(a.id(), -1, 0.0, 0.0, a.value() > 0.0 ? 1.0 : 0.0);
}

/// Balanced reduction; also valid for plain doubles via the other overload.
inline DiffScalar pairwise_sum(std::vector<DiffScalar> terms) {
    if (terms.empty()) {
        throw EvaluationError("pairwise_sum of empty term list");
    }
    std::size_t n = terms.size();
    while (n > 1) {
        std::size_t half = n / 2;
        for (std::size_t i = 0; i < half; ++i) {
            terms[i] = terms[2 * i] + terms[2 * i + 1];
        }
        if (n % 2 == 1) {
            terms[half] = terms[n - 1];
            n = half + 1;
        } else {
            n = half;
        }
    }
    return terms[0];
}

inline double pairwise_sum(std::vector<double> terms) {
    if (terms.empty()) return 0.0;
    std::size_t n = terms.size();
    while (n > 1) {
        std::size_t half = n / 2;
        for (std::size_t i = 0; i < half; ++i) terms[i] = terms[2 * i] + terms[2 * i + 1];
        if (n % 2 == 1) {
            terms[half] = terms[n - 1];
            n = half + 1;
        } else {
            n = half;
        }
    }
    return terms[0];
}

/// Builds an expression from leaves placed at `point`.
using ExprBuilder = std::function<DiffScalar(Tape&, std::span<const DiffScalar>)>;

/// Max over coordinates of |analytic - central difference| / (|cd| + 1e-12).
double check_gradients(const ExprBuilder& f, std::span<const double> point, double h);

}  // namespace enercast::ad
