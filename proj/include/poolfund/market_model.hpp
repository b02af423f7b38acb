#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "poolfund/error.hpp"

namespace poolfund {

// Two-asset return structure: an iid Normal gross real return for the risky
// asset and a deterministic bond paying 1 + r per period.
class ReturnModel {
public:
    static constexpr double default_mu = 1.083;
    static constexpr double default_sigma = 0.1753;

    ReturnModel() : ReturnModel(default_mu, default_sigma, 0.0) {}

    ReturnModel(double mu, double sigma, double r) : mu_(mu), sigma_(sigma), r_(r) {
        if (!std::isfinite(mu))
            throw ValidationError("return model: mu must be finite");
        if (!(sigma > 0.0) || !std::isfinite(sigma))
            throw ValidationError("return model: sigma must be > 0, got " + std::to_string(sigma));
        if (!(r >= 0.0) || !std::isfinite(r))
            throw ValidationError("return model: bond rate must be >= 0, got " + std::to_string(r));
    }

    double mu() const noexcept { return mu_; }
    double sigma() const noexcept { return sigma_; }
    double rate() const noexcept { return r_; }
    double bond_return() const noexcept { return 1.0 + r_; }

    double standardize(double z) const noexcept { return (z - mu_) / sigma_; }

    double pdf(double z) const noexcept {
        if (std::isinf(z))
            return 0.0;
        const double t = standardize(z);
        return std::exp(-0.5 * t * t) / (sigma_ * std::sqrt(2.0 * std::numbers::pi));
    }

    // P(X <= z). erfc keeps full relative precision in the lower tail.
    double cdf(double z) const noexcept {
        if (z == -INFINITY)
            return 0.0;
        if (z == INFINITY)
            return 1.0;
        return 0.5 * std::erfc(-standardize(z) / std::numbers::sqrt2);
    }

    // P(X > z), accurate in the upper tail.
    double survival(double z) const noexcept {
        if (z == -INFINITY)
            return 1.0;
        if (z == INFINITY)
            return 0.0;
        return 0.5 * std::erfc(standardize(z) / std::numbers::sqrt2);
    }

    // P(lo < X <= hi) for lo <= hi, evaluated on whichever side of the mean
    // avoids cancellation.
    double mass_between(double lo, double hi) const noexcept {
        if (!(hi > lo))
            return 0.0;
        if (lo >= mu_)
            return survival(lo) - survival(hi);
        return cdf(hi) - cdf(lo);
    }

    template <class Rng>
    double sample_return(Rng& rng) const {
        std::normal_distribution<double> dist(mu_, sigma_);
        return dist(rng);
    }

    // Gross return of a stock weight q, bond weight 1 - q portfolio.
    double portfolio_return(double q, double x1) const {
        if (!(q >= 0.0 && q <= 1.0))
            throw ContractViolation("portfolio weight outside [0,1]: " + std::to_string(q));
        return q * x1 + (1.0 - q) * bond_return();
    }

    friend bool operator==(const ReturnModel&, const ReturnModel&) = default;

private:
    double mu_;
    double sigma_;
    double r_;
};

} // namespace poolfund
