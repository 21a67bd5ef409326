#pragma once

#include <complex>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "scrf/common.hpp"
#include "scrf/rng.hpp"

namespace scrf::sim {

using cplx = std::complex<double>;

constexpr std::uint16_t kUnlabeled = 0xFFFF;

enum class Domain { Source, Target };
enum class Modulation { BFSK, QPSK };

// Emitter-side impairments: the per-rail odd polynomial u + a3*u^3 + a5*u^5,
// IQ gain imbalance / phase skew, and a carrier frequency offset. Together
// these form the device fingerprint.
struct EmitterProfile {
    int id = 0;                     // class index, 1..K
    double a3 = 0.0;                // cubic coefficient, |a3| <= 0.5
    double a5 = 0.0;                // quintic coefficient, |a5| <= 0.5
    double iq_gain_imbalance = 1.0; // I-rail gain relative to Q
    double iq_phase_skew = 0.0;     // radians
    double carrier_freq_offset = 0.0; // fraction of sample rate

    void validate() const;
};

// Receiver-side impairments: per-rail polynomial u + b2*u^2 + b3*u^3, then
// gain, phase rotation and DC offset, applied in that order. Noise SNR is
// drawn per record, uniform in [snr_lo_db, snr_hi_db]; +inf disables noise.
struct ReceiverProfile {
    int id = 0;
    double b2 = 0.0;
    double b3 = 0.0;
    cplx dc_offset = {0.0, 0.0};
    double phase_rotation = 0.0; // radians
    double gain = 1.0;           // > 0
    double snr_lo_db = std::numeric_limits<double>::infinity();
    double snr_hi_db = std::numeric_limits<double>::infinity();

    void validate() const;
};

struct ChannelProfile {
    std::vector<cplx> fir_taps = {cplx(1.0, 0.0)}; // at most 8 taps
    bool normalize = false;                        // force unit-energy taps

    void validate() const;
    std::vector<cplx> effective_taps() const;
};

// One 2xL I/Q record. Samples are kept as f32 so file round-trips are
// bit-exact; arithmetic upstream of the cast runs in double.
struct IQRecord {
    std::uint32_t length = 0;
    std::vector<float> i_row;
    std::vector<float> q_row;
    std::uint16_t label = kUnlabeled; // 1..K when labeled
    Domain domain = Domain::Target;   // Target iff unlabeled

    bool labeled() const { return label != kUnlabeled; }
};

struct DatasetSpec {
    int K = 0;
    std::uint32_t record_len = 256;
    std::vector<std::uint32_t> per_class_counts; // length K
    std::vector<EmitterProfile> emitters;        // length K
    ReceiverProfile receiver;
    ChannelProfile channel;
    Modulation modulation = Modulation::BFSK;
    std::uint64_t seed = 0;
    double min_emitter_separation = 1e-4;

    std::uint32_t total_count() const;
    void validate() const;
};

// Distorted complex baseband for one record of class `cls` (1-based).
// Operator order follows the reception chain: emitter nonlinearity, channel
// convolution, receiver nonlinearity, then additive noise. No normalization.
std::vector<cplx> synth_baseband(const DatasetSpec& spec, int cls, Rng& rng);

// Full dataset generation. Deterministic in (spec.seed, record index); the
// optional thread count only splits the record loop and never changes bytes.
// Labels are populated iff domain == Source. Per-record RMS is normalized
// to 1 after noise injection.
std::vector<IQRecord> generate_dataset(const DatasetSpec& spec, Domain domain, int threads = 1);

// SCRF container: magic "SCRF", version u16=1, K u16, N u32, L u32, then N
// records of [label u16 (0xFFFF = unlabeled), 2*L little-endian f32, I row
// then Q row].
void write_dataset(const std::vector<IQRecord>& records, int K, const std::string& path);
struct LoadedDataset {
    int K = 0;
    std::vector<IQRecord> records;
};
LoadedDataset read_dataset(const std::string& path);

std::vector<std::uint8_t> serialize_dataset(const std::vector<IQRecord>& records, int K);
LoadedDataset parse_dataset(const std::vector<std::uint8_t>& bytes);

double record_rms(const IQRecord& rec);
std::vector<std::uint32_t> label_histogram(const std::vector<IQRecord>& records, int K);

}  // namespace scrf::sim
