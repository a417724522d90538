#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

#include "errors.hpp"

namespace varhaz {

enum class KernelFamily { gaussian, epanechnikov };

/// mu_i = int x^i K(x) dx, nu_i = int x^i K(x)^2 dx; odd moments vanish by symmetry.
struct KernelMoments {
    double mu0;
    double mu2;
    double nu0;
    double nu2;
};

/**
 * Symmetric probability density used for local weighting.
 *
 * The Gaussian is treated as zero beyond |x| = 8 so that records far from the
 * evaluation point can be dropped from local problems.
 */
class Kernel {
public:
    static constexpr double gaussian_cutoff = 8.0;

    constexpr Kernel() = default;
    constexpr explicit Kernel(KernelFamily family) : family_(family) {}

    static Kernel parse(std::string_view name) {
        if (name == "gaussian") return Kernel(KernelFamily::gaussian);
        if (name == "epanechnikov") return Kernel(KernelFamily::epanechnikov);
        throw DataError("unknown kernel '" + std::string(name) + "'");
    }

    constexpr KernelFamily family() const noexcept { return family_; }

    std::string name() const { return family_ == KernelFamily::gaussian ? "gaussian" : "epanechnikov"; }

    /// Half-width of the region where the kernel is nonzero.
    constexpr double support_radius() const noexcept {
        return family_ == KernelFamily::gaussian ? gaussian_cutoff : 1.0;
    }

    double operator()(double x) const noexcept {
        const double ax = std::abs(x);
        switch (family_) {
        case KernelFamily::gaussian:
            if (ax > gaussian_cutoff) return 0.0;
            return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
        case KernelFamily::epanechnikov:
            return ax < 1.0 ? 0.75 * (1.0 - x * x) : 0.0;
        }
        return 0.0;
    }

    /// K_h(u) = K(u/h)/h.
    double scaled(double h, double u) const {
        if (!(h > 0.0)) throw DataError("bandwidth must be positive");
        return (*this)(u / h) / h;
    }

    KernelMoments moments() const noexcept {
        if (family_ == KernelFamily::gaussian) {
            const double rpi = std::sqrt(std::numbers::pi);
            return {1.0, 1.0, 1.0 / (2.0 * rpi), 1.0 / (4.0 * rpi)};
        }
        return {1.0, 0.2, 0.6, 3.0 / 35.0};
    }

private:
    KernelFamily family_ = KernelFamily::gaussian;
};

} // namespace varhaz
