#pragma once

#include "bardip/common.hpp"

#include <filesystem>
#include <vector>

namespace bardip {

/// Timing and flip-angle train of a FISP-MRF acquisition. Angles in degrees, times in ms.
struct SequenceParams {
  std::vector<double> flip_angles_deg;
  double tr_ms = 10.0;
  double te_ms = 1.908;
  double ti_ms = 18.0;

  std::size_t n_timeframes() const { return flip_angles_deg.size(); }

  /// Throws std::invalid_argument when L == 0, timings are inconsistent or an
  /// angle lies outside [0, 180].
  void validate() const;
};

struct TissueParams {
  double t1_ms = 0.0;
  double t2_ms = 0.0;
  Complex pd{0.0, 0.0};
};

/// Complex transient signal, one entry per timeframe.
using Fingerprint = CxVector;

/// Sinusoidal-lobe flip-angle train with TR/TE/TI = 10/1.908/18 ms.
/// Lobes span 100 frames each; their peaks cycle through 70, 40, 60, 30 and 50
/// degrees over a 5 degree floor.
SequenceParams default_fisp_schedule(std::size_t n_timeframes);

/// Extended phase graph simulation of an inversion-prepared FISP train with
/// ideal spoiling (one full dephasing cycle per TR). Unit equilibrium
/// magnetisation; the returned value at frame l is the F0 state read at TE.
Fingerprint epg_fisp(double t1_ms, double t2_ms, const SequenceParams& seq);

/// Brute-force Bloch simulation of the same experiment with `n_spins`
/// isochromats whose per-TR dephasing angles evenly span 2*pi. Used as the
/// validation oracle for epg_fisp.
Fingerprint isochromat_fisp(double t1_ms, double t2_ms, const SequenceParams& seq,
                            std::size_t n_spins);

// Schedule files: a header `# tr_ms,te_ms,ti_ms,<tr>,<te>,<ti>` followed by one
// angle in degrees per line.
void write_schedule_csv(const std::filesystem::path& path, const SequenceParams& seq);
SequenceParams read_schedule_csv(const std::filesystem::path& path);

} // namespace bardip
