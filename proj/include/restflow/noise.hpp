#pragma once

#include <complex>
#include <vector>

#include "restflow/common.hpp"
#include "restflow/fft.hpp"

namespace restflow {

// Temporal noise template with power spectral density proportional to 1/f,
// one independent column per ROI. Construction: complex Gaussian coefficients
// at positive frequencies scaled by 1/sqrt(f), zero DC, Hermitian symmetry,
// inverse transform, then each column standardized to mean 0 / unit variance
// (population convention).
inline Matrix colored_noise(std::size_t t_len, std::size_t v, Rng& rng) {
    if (t_len < 4) throw ValidationError("colored_noise: need T >= 4, got " + std::to_string(t_len));

    Matrix out(t_len, v);
    std::vector<std::complex<double>> spec(t_len);
    const std::size_t half = t_len / 2;

    for (std::size_t col = 0; col < v; ++col) {
        spec.assign(t_len, {0.0, 0.0});
        for (std::size_t k = 1; k <= half; ++k) {
            double amp = 1.0 / std::sqrt(static_cast<double>(k));
            double re = rng.gauss() * amp;
            double im = rng.gauss() * amp;
            if (2 * k == t_len) im = 0.0;  // Nyquist bin must be real
            spec[k] = {re, im};
            spec[t_len - k] = std::conj(spec[k]);
        }
        fft(spec, true);

        double mean = 0.0;
        for (std::size_t t = 0; t < t_len; ++t) mean += spec[t].real();
        mean /= static_cast<double>(t_len);
        double var = 0.0;
        for (std::size_t t = 0; t < t_len; ++t) {
            double d = spec[t].real() - mean;
            var += d * d;
        }
        var /= static_cast<double>(t_len);
        double inv_sd = var > 0.0 ? 1.0 / std::sqrt(var) : 0.0;
        for (std::size_t t = 0; t < t_len; ++t)
            out(t, col) = (spec[t].real() - mean) * inv_sd;
    }
    return out;
}

}  // namespace restflow
