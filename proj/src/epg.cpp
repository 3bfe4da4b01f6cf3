#include "bardip/epg.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace bardip {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

void check_relaxation(double t1_ms, double t2_ms) {
  if (!(t1_ms > 0.0) || !(t2_ms > 0.0) || !std::isfinite(t1_ms) || !std::isfinite(t2_ms)) {
    throw std::invalid_argument(fmt::format("relaxation times must be positive (T1={}, T2={})", t1_ms, t2_ms));
  }
}

} // namespace

void SequenceParams::validate() const {
  if (flip_angles_deg.empty()) {
    throw std::invalid_argument("sequence needs at least one timeframe");
  }
  if (!(te_ms > 0.0) || !(tr_ms > te_ms)) {
    throw std::invalid_argument(fmt::format("need TR > TE > 0 (TR={}, TE={})", tr_ms, te_ms));
  }
  if (!(ti_ms >= 0.0)) {
    throw std::invalid_argument("TI must be non-negative");
  }
  for (double a : flip_angles_deg) {
    if (!(a >= 0.0 && a <= 180.0)) {
      throw std::invalid_argument(fmt::format("flip angle {} outside [0, 180]", a));
    }
  }
}

SequenceParams default_fisp_schedule(std::size_t n_timeframes) {
  if (n_timeframes == 0) {
    throw std::invalid_argument("schedule length must be positive");
  }
  constexpr std::size_t lobe = 100;
  constexpr double floor_deg = 5.0;
  constexpr double peaks[] = {70.0, 40.0, 60.0, 30.0, 50.0};

  SequenceParams seq;
  seq.flip_angles_deg.resize(n_timeframes);
  for (std::size_t l = 0; l < n_timeframes; ++l) {
    const double peak = peaks[(l / lobe) % std::size(peaks)];
    const double phase = std::numbers::pi * (static_cast<double>(l % lobe) + 0.5) / lobe;
    seq.flip_angles_deg[l] = floor_deg + (peak - floor_deg) * std::sin(phase);
  }
  return seq;
}

Fingerprint epg_fisp(double t1_ms, double t2_ms, const SequenceParams& seq) {
  check_relaxation(t1_ms, t2_ms);
  seq.validate();
  const std::size_t L = seq.n_timeframes();
  const std::size_t n_states = L + 1;

  // fp[k] = F+_k, fm[k] = F-_k (fm[0] == conj(fp[0])), z[k] = Z_k.
  std::vector<Complex> fp(n_states), fm(n_states), z(n_states);

  const double e1_ti = std::exp(-seq.ti_ms / t1_ms);
  z[0] = Complex(-e1_ti + (1.0 - e1_ti), 0.0);

  const double e1 = std::exp(-seq.tr_ms / t1_ms);
  const double e2 = std::exp(-seq.tr_ms / t2_ms);
  const double e2_te = std::exp(-seq.te_ms / t2_ms);
  const Complex i1(0.0, 1.0);

  Fingerprint signal(static_cast<Eigen::Index>(L));
  // Only orders below `active` can be non-zero after l shifts.
  std::size_t active = 1;
  for (std::size_t l = 0; l < L; ++l) {
    const double a = seq.flip_angles_deg[l] * kDeg;
    const double c2 = std::cos(a / 2) * std::cos(a / 2);
    const double s2 = std::sin(a / 2) * std::sin(a / 2);
    const double sa = std::sin(a);
    const double ca = std::cos(a);
    for (std::size_t k = 0; k < active; ++k) {
      const Complex p = fp[k];
      const Complex m = fm[k];
      const Complex zz = z[k];
      fp[k] = c2 * p + s2 * m - i1 * sa * zz;
      fm[k] = s2 * p + c2 * m + i1 * sa * zz;
      z[k] = -0.5 * i1 * sa * p + 0.5 * i1 * sa * m + ca * zz;
    }
    fm[0] = std::conj(fp[0]);
    z[0] = Complex(z[0].real(), 0.0);

    signal[static_cast<Eigen::Index>(l)] = fp[0] * e2_te;

    for (std::size_t k = 0; k < active; ++k) {
      fp[k] *= e2;
      fm[k] *= e2;
      z[k] *= e1;
    }
    z[0] += 1.0 - e1;

    // Dephasing by one cycle: F+ orders move up, F- orders move down.
    const std::size_t next = std::min(active + 1, n_states);
    for (std::size_t k = next - 1; k >= 1; --k) {
      fp[k] = fp[k - 1];
    }
    for (std::size_t k = 0; k + 1 < next; ++k) {
      fm[k] = fm[k + 1];
    }
    fm[next - 1] = 0.0;
    fp[0] = std::conj(fm[0]);
    active = next;

    if (!std::isfinite(std::abs(fp[0])) || !std::isfinite(std::abs(z[0]))) {
      throw SimulationDiverged(fmt::format("EPG state became non-finite at frame {} (T1={}, T2={})", l, t1_ms, t2_ms));
    }
  }
  return signal;
}

Fingerprint isochromat_fisp(double t1_ms, double t2_ms, const SequenceParams& seq, std::size_t n_spins) {
  check_relaxation(t1_ms, t2_ms);
  seq.validate();
  if (n_spins == 0) {
    throw std::invalid_argument("need at least one spin");
  }
  const std::size_t L = seq.n_timeframes();
  const double e1_ti = std::exp(-seq.ti_ms / t1_ms);
  const double e1 = std::exp(-seq.tr_ms / t1_ms);
  const double e2 = std::exp(-seq.tr_ms / t2_ms);
  const double e2_te = std::exp(-seq.te_ms / t2_ms);

  std::vector<double> mx(n_spins, 0.0), my(n_spins, 0.0), mz(n_spins, -e1_ti + (1.0 - e1_ti));
  std::vector<double> cphi(n_spins), sphi(n_spins);
  for (std::size_t j = 0; j < n_spins; ++j) {
    const double phi = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n_spins);
    cphi[j] = std::cos(phi);
    sphi[j] = std::sin(phi);
  }

  Fingerprint signal(static_cast<Eigen::Index>(L));
  for (std::size_t l = 0; l < L; ++l) {
    const double a = seq.flip_angles_deg[l] * kDeg;
    const double ca = std::cos(a);
    const double sa = std::sin(a);
    double sx = 0.0;
    double sy = 0.0;
    for (std::size_t j = 0; j < n_spins; ++j) {
      // Rotation about x.
      const double y = my[j] * ca - mz[j] * sa;
      const double z = my[j] * sa + mz[j] * ca;
      my[j] = y;
      mz[j] = z;
      sx += mx[j];
      sy += my[j];

      mx[j] *= e2;
      my[j] *= e2;
      mz[j] = mz[j] * e1 + (1.0 - e1);

      const double x = mx[j] * cphi[j] - my[j] * sphi[j];
      my[j] = mx[j] * sphi[j] + my[j] * cphi[j];
      mx[j] = x;
    }
    const double n = static_cast<double>(n_spins);
    signal[static_cast<Eigen::Index>(l)] = Complex(sx / n, sy / n) * e2_te;
  }
  return signal;
}

void write_schedule_csv(const std::filesystem::path& path, const SequenceParams& seq) {
  seq.validate();
  std::ofstream out(path);
  if (!out) {
    throw FormatError("cannot write schedule " + path.string());
  }
  out << fmt::format("# tr_ms,te_ms,ti_ms,{:.17g},{:.17g},{:.17g}\n", seq.tr_ms, seq.te_ms, seq.ti_ms);
  for (double a : seq.flip_angles_deg) {
    out << fmt::format("{:.17g}\n", a);
  }
}

SequenceParams read_schedule_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw FormatError("cannot open schedule " + path.string());
  }
  SequenceParams seq;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    if (line.front() == '#') {
      std::vector<std::string> fields;
      std::stringstream ss(line.substr(1));
      std::string f;
      while (std::getline(ss, f, ',')) {
        fields.push_back(f);
      }
      if (fields.size() != 6) {
        throw FormatError("schedule header must be '# tr_ms,te_ms,ti_ms,<tr>,<te>,<ti>'");
      }
      seq.tr_ms = std::stod(fields[3]);
      seq.te_ms = std::stod(fields[4]);
      seq.ti_ms = std::stod(fields[5]);
      have_header = true;
      continue;
    }
    try {
      seq.flip_angles_deg.push_back(std::stod(line));
    } catch (const std::exception&) {
      throw FormatError("bad flip angle '" + line + "' in " + path.string());
    }
  }
  if (!have_header) {
    throw FormatError("schedule " + path.string() + " lacks the timing header");
  }
  seq.validate();
  return seq;
}

} // namespace bardip
