#include "scrf/signal_sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

namespace scrf::sim {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr std::uint32_t kSamplesPerSymbol = 32; // symbol rate L/32 per record

void require_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw std::invalid_argument(std::string("non-finite profile field: ") + what);
}

}  // namespace

void EmitterProfile::validate() const {
    require_finite(a3, "a3");
    require_finite(a5, "a5");
    require_finite(iq_gain_imbalance, "iq_gain_imbalance");
    require_finite(iq_phase_skew, "iq_phase_skew");
    require_finite(carrier_freq_offset, "carrier_freq_offset");
    if (std::abs(a3) > 0.5 || std::abs(a5) > 0.5)
        throw std::invalid_argument("emitter polynomial coefficients must satisfy |a3|,|a5| <= 0.5");
}

void ReceiverProfile::validate() const {
    require_finite(b2, "b2");
    require_finite(b3, "b3");
    require_finite(dc_offset.real(), "dc_offset.re");
    require_finite(dc_offset.imag(), "dc_offset.im");
    require_finite(phase_rotation, "phase_rotation");
    require_finite(gain, "gain");
    if (gain <= 0.0) throw std::invalid_argument("receiver gain must be > 0");
    if (std::isnan(snr_lo_db) || std::isnan(snr_hi_db) || snr_lo_db > snr_hi_db)
        throw std::invalid_argument("receiver snr range requires lo <= hi");
}

void ChannelProfile::validate() const {
    if (fir_taps.empty() || fir_taps.size() > 8)
        throw std::invalid_argument("channel needs 1..8 FIR taps");
    double energy = 0.0;
    for (const auto& t : fir_taps) {
        require_finite(t.real(), "fir_tap.re");
        require_finite(t.imag(), "fir_tap.im");
        energy += std::norm(t);
    }
    if (energy <= 0.0) throw std::invalid_argument("channel needs at least one nonzero tap");
}

std::vector<cplx> ChannelProfile::effective_taps() const {
    std::vector<cplx> taps = fir_taps;
    if (normalize) {
        double energy = 0.0;
        for (const auto& t : taps) energy += std::norm(t);
        const double scale = 1.0 / std::sqrt(energy);
        for (auto& t : taps) t *= scale;
    }
    return taps;
}

std::uint32_t DatasetSpec::total_count() const {
    std::uint32_t total = 0;
    for (auto c : per_class_counts) total += c;
    return total;
}

void DatasetSpec::validate() const {
    if (K <= 0) throw std::invalid_argument("K must be positive");
    if (per_class_counts.size() != static_cast<std::size_t>(K))
        throw std::invalid_argument("per_class_counts must have K entries");
    if (emitters.size() != static_cast<std::size_t>(K))
        throw std::invalid_argument("emitters must have K entries");
    if (record_len < 16) throw std::invalid_argument("record_len < 16 is too short for modulation");
    for (const auto& e : emitters) e.validate();
    receiver.validate();
    channel.validate();
}

namespace {

// Two emitters collide when every fingerprint field differs by less than the
// configured minimum separation.
bool profiles_collide(const EmitterProfile& a, const EmitterProfile& b, double sep) {
    return std::abs(a.a3 - b.a3) < sep && std::abs(a.a5 - b.a5) < sep &&
           std::abs(a.iq_gain_imbalance - b.iq_gain_imbalance) < sep &&
           std::abs(a.iq_phase_skew - b.iq_phase_skew) < sep &&
           std::abs(a.carrier_freq_offset - b.carrier_freq_offset) < sep;
}

std::vector<cplx> modulate(const DatasetSpec& spec, Rng& rng) {
    const std::uint32_t L = spec.record_len;
    const std::uint32_t sym_len = std::min(kSamplesPerSymbol, L);
    std::vector<cplx> out(L);
    if (spec.modulation == Modulation::BFSK) {
        // phase-continuous binary FSK at +-2 cycles per symbol
        const double f_dev = 2.0 / static_cast<double>(sym_len);
        double phase = 0.0;
        double freq = 0.0;
        for (std::uint32_t n = 0; n < L; ++n) {
            if (n % sym_len == 0) {
                const bool bit = rng.next_u64() & 1;
                freq = bit ? f_dev : -f_dev;
            }
            out[n] = cplx(std::cos(phase), std::sin(phase));
            phase += kTwoPi * freq;
        }
    } else {
        double sym_phase = 0.0;
        for (std::uint32_t n = 0; n < L; ++n) {
            if (n % sym_len == 0) {
                const std::uint64_t dibit = rng.next_u64() & 3;
                sym_phase = kTwoPi * (0.125 + 0.25 * static_cast<double>(dibit));
            }
            out[n] = cplx(std::cos(sym_phase), std::sin(sym_phase));
        }
    }
    return out;
}

}  // namespace

std::vector<cplx> synth_baseband(const DatasetSpec& spec, int cls, Rng& rng) {
    spec.validate();
    if (cls < 1 || cls > spec.K) throw std::invalid_argument("class index out of range");
    const EmitterProfile& em = spec.emitters[static_cast<std::size_t>(cls - 1)];
    const ReceiverProfile& rx = spec.receiver;
    const std::uint32_t L = spec.record_len;

    std::vector<cplx> x = modulate(spec, rng);

    // emitter nonlinearity phi: per-rail odd polynomial, IQ imbalance, CFO
    for (std::uint32_t n = 0; n < L; ++n) {
        double i = x[n].real();
        double q = x[n].imag();
        i = i + em.a3 * i * i * i + em.a5 * i * i * i * i * i;
        q = q + em.a3 * q * q * q + em.a5 * q * q * q * q * q;
        const double i_imb = em.iq_gain_imbalance * i;
        const double q_imb = q * std::cos(em.iq_phase_skew) + i * std::sin(em.iq_phase_skew);
        const double ang = kTwoPi * em.carrier_freq_offset * static_cast<double>(n);
        x[n] = cplx(i_imb, q_imb) * cplx(std::cos(ang), std::sin(ang));
    }

    // channel convolution, first L samples of the linear convolution
    const std::vector<cplx> taps = spec.channel.effective_taps();
    if (!(taps.size() == 1 && taps[0] == cplx(1.0, 0.0))) {
        std::vector<cplx> y(L, cplx(0.0, 0.0));
        for (std::uint32_t n = 0; n < L; ++n) {
            cplx acc(0.0, 0.0);
            const std::uint32_t kmax = std::min<std::uint32_t>(n + 1, static_cast<std::uint32_t>(taps.size()));
            for (std::uint32_t k = 0; k < kmax; ++k) acc += taps[k] * x[n - k];
            y[n] = acc;
        }
        x.swap(y);
    }

    // receiver nonlinearity psi: per-rail polynomial, then gain, rotation, DC
    const cplx rot(std::cos(rx.phase_rotation), std::sin(rx.phase_rotation));
    for (std::uint32_t n = 0; n < L; ++n) {
        double i = x[n].real();
        double q = x[n].imag();
        i = i + rx.b2 * i * i + rx.b3 * i * i * i;
        q = q + rx.b2 * q * q + rx.b3 * q * q * q;
        x[n] = cplx(i, q) * rx.gain * rot + rx.dc_offset;
    }

    // additive complex noise at a per-record SNR drawn from [lo, hi]
    const double snr_db = (rx.snr_lo_db == rx.snr_hi_db) ? rx.snr_lo_db : rng.uniform(rx.snr_lo_db, rx.snr_hi_db);
    if (std::isfinite(snr_db)) {
        double sig_power = 0.0;
        for (const auto& v : x) sig_power += std::norm(v);
        sig_power /= static_cast<double>(L);
        const double noise_power = sig_power / std::pow(10.0, snr_db / 10.0);
        const double sigma = std::sqrt(noise_power / 2.0);
        for (auto& v : x) v += cplx(sigma * rng.gaussian(), sigma * rng.gaussian());
    }
    return x;
}

namespace {

IQRecord make_record(const DatasetSpec& spec, Domain domain, int cls, std::uint64_t record_index) {
    Rng rng(derive_stream(spec.seed, record_index));
    const std::vector<cplx> x = synth_baseband(spec, cls, rng);
    const std::uint32_t L = spec.record_len;

    // RMS over complex samples: sqrt(mean |x|^2) -> 1
    double power = 0.0;
    for (const auto& v : x) power += std::norm(v);
    power /= static_cast<double>(L);
    const double scale = power > 0.0 ? 1.0 / std::sqrt(power) : 1.0;

    IQRecord rec;
    rec.length = L;
    rec.i_row.resize(L);
    rec.q_row.resize(L);
    for (std::uint32_t n = 0; n < L; ++n) {
        rec.i_row[n] = static_cast<float>(x[n].real() * scale);
        rec.q_row[n] = static_cast<float>(x[n].imag() * scale);
    }
    rec.domain = domain;
    rec.label = (domain == Domain::Source) ? static_cast<std::uint16_t>(cls) : kUnlabeled;
    return rec;
}

}  // namespace

std::vector<IQRecord> generate_dataset(const DatasetSpec& spec, Domain domain, int threads) {
    spec.validate();
    for (int a = 0; a < spec.K; ++a)
        for (int b = a + 1; b < spec.K; ++b)
            if (profiles_collide(spec.emitters[a], spec.emitters[b], spec.min_emitter_separation))
                throw std::invalid_argument("emitter profile collision: emitters " + std::to_string(a + 1) + " and " +
                                            std::to_string(b + 1) + " are within the minimum separation");

    const std::uint32_t total = spec.total_count();
    std::vector<int> class_of(total);
    std::uint32_t idx = 0;
    for (int k = 0; k < spec.K; ++k)
        for (std::uint32_t c = 0; c < spec.per_class_counts[static_cast<std::size_t>(k)]; ++c) class_of[idx++] = k + 1;

    std::vector<IQRecord> records(total);
    auto worker = [&](std::uint32_t begin, std::uint32_t end) {
        for (std::uint32_t r = begin; r < end; ++r) records[r] = make_record(spec, domain, class_of[r], r);
    };

    if (threads <= 1 || total < 64) {
        worker(0, total);
    } else {
        const std::uint32_t n_threads = std::min<std::uint32_t>(static_cast<std::uint32_t>(threads), total);
        std::vector<std::thread> pool;
        pool.reserve(n_threads);
        for (std::uint32_t t = 0; t < n_threads; ++t) {
            const std::uint32_t begin = total * t / n_threads;
            const std::uint32_t end = total * (t + 1) / n_threads;
            pool.emplace_back(worker, begin, end);
        }
        for (auto& th : pool) th.join();
    }
    return records;
}

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct Reader {
    const std::vector<std::uint8_t>& b;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > b.size()) throw FormatError("truncated SCRF file");
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(b[pos] | (b[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

}  // namespace

std::vector<std::uint8_t> serialize_dataset(const std::vector<IQRecord>& records, int K) {
    if (K < 1 || K > 0xFFFE) throw std::invalid_argument("K out of range for SCRF header");
    const std::uint32_t L = records.empty() ? 0 : records.front().length;
    std::vector<std::uint8_t> out;
    out.reserve(14 + records.size() * (2 + 8ull * L));
    out.insert(out.end(), {'S', 'C', 'R', 'F'});
    put_u16(out, 1); // version
    put_u16(out, static_cast<std::uint16_t>(K));
    put_u32(out, static_cast<std::uint32_t>(records.size()));
    put_u32(out, L);
    for (const auto& rec : records) {
        if (rec.length != L) throw std::invalid_argument("all records in one SCRF file must share L");
        if (rec.labeled() && (rec.label < 1 || rec.label > K))
            throw std::invalid_argument("record label out of range for K");
        put_u16(out, rec.label);
        for (float v : rec.i_row) put_f32(out, v);
        for (float v : rec.q_row) put_f32(out, v);
    }
    return out;
}

LoadedDataset parse_dataset(const std::vector<std::uint8_t>& bytes) {
    Reader r{bytes};
    r.need(4);
    if (std::memcmp(bytes.data(), "SCRF", 4) != 0) throw FormatError("bad magic: not an SCRF dataset file");
    r.pos = 4;
    const std::uint16_t version = r.u16();
    if (version != 1) throw FormatError("unsupported SCRF version " + std::to_string(version));
    LoadedDataset ds;
    ds.K = r.u16();
    const std::uint32_t n = r.u32();
    const std::uint32_t L = r.u32();
    ds.records.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        IQRecord& rec = ds.records[i];
        rec.label = r.u16();
        if (rec.labeled() && (rec.label < 1 || rec.label > ds.K))
            throw FormatError("record " + std::to_string(i) + ": label " + std::to_string(rec.label) +
                              " out of range for K=" + std::to_string(ds.K));
        rec.length = L;
        rec.i_row.resize(L);
        rec.q_row.resize(L);
        for (std::uint32_t s = 0; s < L; ++s) rec.i_row[s] = r.f32();
        for (std::uint32_t s = 0; s < L; ++s) rec.q_row[s] = r.f32();
        rec.domain = rec.labeled() ? Domain::Source : Domain::Target;
    }
    if (r.pos != bytes.size()) throw FormatError("trailing bytes after last SCRF record");
    return ds;
}

void write_dataset(const std::vector<IQRecord>& records, int K, const std::string& path) {
    const std::vector<std::uint8_t> bytes = serialize_dataset(records, K);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("short write: " + path);
}

LoadedDataset read_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open for reading: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_dataset(bytes);
}

double record_rms(const IQRecord& rec) {
    double power = 0.0;
    for (std::uint32_t n = 0; n < rec.length; ++n)
        power += static_cast<double>(rec.i_row[n]) * rec.i_row[n] + static_cast<double>(rec.q_row[n]) * rec.q_row[n];
    return std::sqrt(power / static_cast<double>(rec.length));
}

std::vector<std::uint32_t> label_histogram(const std::vector<IQRecord>& records, int K) {
    std::vector<std::uint32_t> hist(static_cast<std::size_t>(K), 0);
    for (const auto& r : records)
        if (r.labeled() && r.label >= 1 && r.label <= K) ++hist[r.label - 1u];
    return hist;
}

}  // namespace scrf::sim
