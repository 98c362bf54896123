#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "polygraph/errors.hpp"
#include "polygraph/tensor.hpp"

namespace polygraph {

// ---------------------------------------------------------------------------
// MFCC extraction. Conventions (fixed, shared with the test oracle):
//   * pre-emphasis on the whole signal: y[0] = x[0], y[n] = x[n] - a*x[n-1]
//   * frame length/hop in seconds, rounded to samples; frames that would
//     run past the signal end are dropped:
//       frames = floor((len - frame_samples)/hop_samples) + 1
//   * symmetric Hann window w[n] = 0.5 - 0.5 cos(2 pi n / (L-1))
//   * power spectrum |X_k|^2 / N_fft on an N_fft = next-pow2(L) grid
//   * n_filters triangular mel filters between 0 Hz and Nyquist,
//     mel(f) = 2595 log10(1 + f/700), evaluated at bin centers k*sr/N_fft
//   * natural log with floor 1e-10
//   * orthonormal DCT-II, first n_mfcc coefficients kept
// ---------------------------------------------------------------------------

struct MfccConfig {
    int n_mfcc = 13;
    double frame_seconds = 0.025;
    double hop_seconds = 0.010;
    int n_filters = 26;
    double pre_emphasis = 0.97;
};

constexpr double kLogFloor = 1e-10;

namespace detail {

/// In-place iterative radix-2 Cooley-Tukey FFT.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
    size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        double ang = -2.0 * M_PI / static_cast<double>(len);
        std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                std::complex<double> u = a[i + k];
                std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

/// Triangular filterbank evaluated at FFT bin center frequencies.
inline std::vector<std::vector<double>> mel_filterbank(int n_filters, int n_fft, int sample_rate) {
    int bins = n_fft / 2 + 1;
    double nyquist = sample_rate / 2.0;
    std::vector<double> edges(static_cast<size_t>(n_filters) + 2);
    double mel_lo = hz_to_mel(0.0), mel_hi = hz_to_mel(nyquist);
    for (int i = 0; i < n_filters + 2; ++i) {
        edges[static_cast<size_t>(i)] =
            mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_filters + 1));
    }
    std::vector<std::vector<double>> bank(static_cast<size_t>(n_filters),
                                          std::vector<double>(static_cast<size_t>(bins), 0.0));
    for (int m = 0; m < n_filters; ++m) {
        double lo = edges[static_cast<size_t>(m)];
        double mid = edges[static_cast<size_t>(m) + 1];
        double hi = edges[static_cast<size_t>(m) + 2];
        for (int k = 0; k < bins; ++k) {
            double f = static_cast<double>(k) * sample_rate / n_fft;
            double w = 0.0;
            if (f >= lo && f <= mid && mid > lo) {
                w = (f - lo) / (mid - lo);
            } else if (f > mid && f <= hi && hi > mid) {
                w = (hi - f) / (hi - mid);
            }
            bank[static_cast<size_t>(m)][static_cast<size_t>(k)] = w;
        }
    }
    return bank;
}

}  // namespace detail

/// Frames x n_mfcc coefficient matrix for a mono waveform.
inline Tensor compute_mfcc(const std::vector<double>& samples, int sample_rate,
                           const MfccConfig& cfg = {}) {
    if (sample_rate <= 0) throw ConfigError("compute_mfcc: sample rate must be positive");
    if (cfg.n_mfcc < 1 || cfg.n_mfcc > cfg.n_filters) {
        throw ConfigError("compute_mfcc: n_mfcc must be in [1, n_filters]");
    }
    int frame_samples = static_cast<int>(std::lround(cfg.frame_seconds * sample_rate));
    int hop_samples = static_cast<int>(std::lround(cfg.hop_seconds * sample_rate));
    if (frame_samples < 2 || hop_samples < 1) throw ConfigError("compute_mfcc: frame/hop too small");
    if (static_cast<int>(samples.size()) < frame_samples) {
        throw DataError("compute_mfcc: waveform shorter than one frame");
    }

    std::vector<double> emphasized(samples.size());
    emphasized[0] = samples[0];
    for (size_t i = 1; i < samples.size(); ++i) {
        emphasized[i] = samples[i] - cfg.pre_emphasis * samples[i - 1];
    }

    int frames = (static_cast<int>(samples.size()) - frame_samples) / hop_samples + 1;
    int n_fft = 1;
    while (n_fft < frame_samples) n_fft <<= 1;
    int bins = n_fft / 2 + 1;

    std::vector<double> window(static_cast<size_t>(frame_samples));
    for (int n = 0; n < frame_samples; ++n) {
        window[static_cast<size_t>(n)] =
            0.5 - 0.5 * std::cos(2.0 * M_PI * n / (frame_samples - 1));
    }
    auto bank = detail::mel_filterbank(cfg.n_filters, n_fft, sample_rate);

    Tensor out({frames, cfg.n_mfcc});
    std::vector<std::complex<double>> buf(static_cast<size_t>(n_fft));
    std::vector<double> power(static_cast<size_t>(bins));
    std::vector<double> log_energy(static_cast<size_t>(cfg.n_filters));
    for (int fr = 0; fr < frames; ++fr) {
        int start = fr * hop_samples;
        for (int n = 0; n < n_fft; ++n) {
            double v = n < frame_samples
                           ? emphasized[static_cast<size_t>(start + n)] * window[static_cast<size_t>(n)]
                           : 0.0;
            buf[static_cast<size_t>(n)] = {v, 0.0};
        }
        detail::fft_radix2(buf);
        for (int k = 0; k < bins; ++k) {
            power[static_cast<size_t>(k)] = std::norm(buf[static_cast<size_t>(k)]) / n_fft;
        }
        for (int m = 0; m < cfg.n_filters; ++m) {
            double e = 0.0;
            const auto& filt = bank[static_cast<size_t>(m)];
            for (int k = 0; k < bins; ++k) e += power[static_cast<size_t>(k)] * filt[static_cast<size_t>(k)];
            log_energy[static_cast<size_t>(m)] = std::log(std::max(e, kLogFloor));
        }
        // orthonormal DCT-II
        for (int n = 0; n < cfg.n_mfcc; ++n) {
            double s = 0.0;
            for (int m = 0; m < cfg.n_filters; ++m) {
                s += log_energy[static_cast<size_t>(m)] *
                     std::cos(M_PI * n * (2.0 * m + 1.0) / (2.0 * cfg.n_filters));
            }
            double alpha = n == 0 ? std::sqrt(1.0 / cfg.n_filters) : std::sqrt(2.0 / cfg.n_filters);
            out.at(fr, n) = alpha * s;
        }
    }
    return out;
}

}  // namespace polygraph
