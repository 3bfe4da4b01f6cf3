#include "experiment.hpp"

#include "bardip/acquisition.hpp"
#include "bardip/dictionary.hpp"
#include "bardip/metrics.hpp"
#include "bardip/phantom.hpp"

#include <fmt/format.h>

#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

namespace mrf {

using namespace bardip;

fs::path Layout::phantom(std::size_t slice) const { return root / fmt::format("phantom_s{}.mrfq", slice); }

fs::path Layout::kspace(std::size_t slice, double snr_db) const {
  return root / fmt::format("kspace_s{}_snr{}.mrfk", slice, snr_tag(snr_db));
}

fs::path Layout::run_dir(Mode m, std::size_t slice, double snr_db) const {
  return root / "recon" / to_string(m) / fmt::format("s{}_snr{}", slice, snr_tag(snr_db));
}

namespace {

std::mutex g_log_mutex;

template <class... Args>
void note(fmt::format_string<Args...> f, Args&&... args) {
  const std::lock_guard lock(g_log_mutex);
  fmt::print(stderr, "{}\n", fmt::format(f, std::forward<Args>(args)...));
}

SequenceParams sequence_from(const ExperimentConfig& cfg) {
  SequenceParams seq = cfg.sequence.schedule.empty() ? default_fisp_schedule(cfg.sequence.timeframes)
                                                     : read_schedule_csv(cfg.sequence.schedule);
  if (!cfg.sequence.schedule.empty() && seq.n_timeframes() != cfg.sequence.timeframes) {
    throw ConfigError(fmt::format("[sequence] schedule has {} frames, timeframes = {}", seq.n_timeframes(),
                                  cfg.sequence.timeframes));
  }
  seq.tr_ms = cfg.sequence.tr_ms;
  seq.te_ms = cfg.sequence.te_ms;
  seq.ti_ms = cfg.sequence.ti_ms;
  seq.validate();
  return seq;
}

CoilMaps coils_from(const ExperimentConfig& cfg) {
  const auto& p = cfg.phantom;
  return cfg.acquisition.coils == 1 ? CoilMaps::single(p.height, p.width)
                                    : CoilMaps::gaussian(p.height, p.width, cfg.acquisition.coils);
}

// Everything a reconstruction needs, rebuilt from the simulate artifacts.
struct Problem {
  SequenceParams seq;
  CompressedDictionary cdict;
  std::optional<AcquisitionOperator> op;
};

Problem load_problem(const ExperimentConfig& cfg, const Layout& out) {
  Problem p;
  p.seq = read_schedule_csv(out.schedule());
  auto [dict, basis] = load_dictionary(out.dictionary());
  if (!basis) {
    throw ArtifactError(fmt::format("{} holds no SVD basis", out.dictionary().string()));
  }
  p.cdict = compress(dict, *basis);
  p.op.emplace(cfg.phantom.height, cfg.phantom.width, load_trajectory(out.trajectory()), coils_from(cfg), *basis);
  return p;
}

BdaeArchitecture architecture(const ExperimentConfig& cfg) {
  BdaeArchitecture a;
  a.channels = cfg.dictionary.channels;
  a.hidden = cfg.bdae.hidden;
  return a;
}

Bdae load_pretrained(const ExperimentConfig& cfg, const Layout& out) {
  Bdae bdae(architecture(cfg), 0);
  load_bdae(out.bdae(), bdae);
  return bdae;
}

QuantMaps as_maps(const std::vector<TissueParams>& qmaps, const QuantMaps& like) {
  QuantMaps m;
  m.height = like.height;
  m.width = like.width;
  m.qmaps = qmaps;
  m.mask = like.mask;
  return m;
}

struct Task {
  Mode mode;
  std::size_t slice;
  double snr_db;
};

// Runs `body` over tasks on up to `jobs` threads. The first failure is
// rethrown after all workers stop; divergence takes precedence.
template <class F>
void run_parallel(const std::vector<Task>& tasks, std::size_t jobs, F body) {
  std::atomic<std::size_t> next{0};
  std::mutex failure_mutex;
  std::exception_ptr failure;
  bool failure_is_divergence = false;
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        body(tasks[i]);
      } catch (...) {
        const std::lock_guard lock(failure_mutex);
        bool diverged = false;
        try {
          throw;
        } catch (const TrainingDiverged&) {
          diverged = true;
        } catch (...) {
        }
        if (!failure || (diverged && !failure_is_divergence)) {
          failure = std::current_exception();
          failure_is_divergence = diverged;
        }
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(jobs, tasks.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n; ++i) {
      pool.emplace_back(worker);
    }
    for (auto& t : pool) {
      t.join();
    }
  }
  if (failure) {
    std::rethrow_exception(failure);
  }
}

std::string fmt_value(double v) { return fmt::format("{:.17g}", v); }

} // namespace

void cmd_simulate(const ExperimentConfig& cfg) {
  cfg.validate();
  const Layout out{cfg.out};
  fs::create_directories(out.root);
  Manifest manifest(out.root);
  std::vector<fs::path> files;
  nlohmann::json seeds = nlohmann::json::object();

  const SequenceParams seq = sequence_from(cfg);
  write_schedule_csv(out.schedule(), seq);
  files.push_back(out.schedule());

  const auto& d = cfg.dictionary;
  const Dictionary dict = build_dictionary(linear_grid(d.t1_first, d.t1_last, d.t1_step),
                                           linear_grid(d.t2_first, d.t2_last, d.t2_step), seq);
  const SvdBasis basis = compute_svd_basis(dict, d.channels);
  save_dictionary(out.dictionary(), dict, &basis);
  files.push_back(out.dictionary());
  note("dictionary: {} atoms x {} frames, {} channels keep {:.4f}% of the energy", dict.atoms.rows(),
       dict.atoms.cols(), d.channels, 100.0 * basis.captured_energy_fraction());

  const auto& ph = cfg.phantom;
  Trajectory traj = make_spiral_trajectory(ph.height, ph.width, seq.n_timeframes(), cfg.trajectory.samples,
                                           cfg.trajectory.density_exponent, cfg.trajectory.rotations);
  save_trajectory(out.trajectory(), traj);
  files.push_back(out.trajectory());
  const AcquisitionOperator op(ph.height, ph.width, std::move(traj), coils_from(cfg), basis);

  for (std::size_t s = 0; s < ph.slices; ++s) {
    const std::string phantom_label = fmt::format("phantom/{}", s);
    const std::uint64_t phantom_seed = derive_seed(cfg.seed, phantom_label);
    seeds[phantom_label] = phantom_seed;
    const Phantom phantom = make_brain_phantom(ph.height, ph.width, phantom_seed);
    save_maps(out.phantom(s), phantom);
    write_previews(out.phantom(s).replace_extension(), phantom);
    files.push_back(out.phantom(s));
    for (double snr : cfg.acquisition.snr_db) {
      const std::string noise_label = fmt::format("noise/{}/{}", s, snr_tag(snr));
      const std::uint64_t noise_seed = derive_seed(cfg.seed, noise_label);
      seeds[noise_label] = noise_seed;
      save_kspace(out.kspace(s, snr), simulate_kspace(phantom.qmaps, ph.height, ph.width, seq, op, snr, noise_seed));
      files.push_back(out.kspace(s, snr));
      note("slice {} SNR {} dB: k-space written", s, snr_tag(snr));
    }
  }
  manifest.record("simulate", cfg.simulate_inputs(), files, seeds);
}

void cmd_pretrain(const ExperimentConfig& cfg) {
  cfg.validate();
  const Layout out{cfg.out};
  Manifest manifest(out.root);
  manifest.verify("simulate", cfg.simulate_inputs());

  auto [dict, basis] = load_dictionary(out.dictionary());
  if (!basis) {
    throw ArtifactError(fmt::format("{} holds no SVD basis", out.dictionary().string()));
  }
  const CompressedDictionary cdict = compress(dict, *basis);

  const std::uint64_t init_seed = derive_seed(cfg.seed, "bdae/init");
  const std::uint64_t train_seed = derive_seed(cfg.seed, "bdae/train");
  Bdae bdae(architecture(cfg), init_seed);
  PretrainConfig pc;
  pc.epochs = cfg.bdae.epochs;
  pc.batch_size = cfg.bdae.batch_size;
  pc.lr = cfg.bdae.lr;
  pc.lr_final = cfg.bdae.lr_final;
  pc.lambda_e = cfg.bdae.lambda_e;
  pc.augmentation.noise_sigma = cfg.bdae.noise_sigma;
  pc.seed = train_seed;
  const std::size_t every = std::max<std::size_t>(1, pc.epochs / 10);
  pretrain_bdae(bdae, cdict, pc, [&](std::size_t epoch, double loss) {
    if ((epoch + 1) % every == 0 || epoch + 1 == pc.epochs) {
      note("epoch {:>5}/{}: loss {:.6g}", epoch + 1, pc.epochs, loss);
    }
  });
  save_bdae(out.bdae(), bdae);

  const auto rows = evaluate_bdae(bdae, cdict);
  write_evaluation_csv(out.bdae_eval(), rows);
  double t1 = 0.0, t2 = 0.0;
  for (const auto& r : rows) {
    t1 += std::abs(r.t1_est - r.t1_true) / r.t1_true;
    t2 += std::abs(r.t2_est - r.t2_true) / r.t2_true;
  }
  note("encoder MAPE on dictionary atoms: T1 {:.3f}%, T2 {:.3f}%", 100.0 * t1 / static_cast<double>(rows.size()),
       100.0 * t2 / static_cast<double>(rows.size()));
  manifest.record("pretrain", cfg.pretrain_inputs(), {out.bdae(), out.bdae_eval()},
                  {{"bdae/init", init_seed}, {"bdae/train", train_seed}});
}

void cmd_reconstruct(const ExperimentConfig& cfg, std::size_t jobs) {
  cfg.validate();
  const Layout out{cfg.out};
  Manifest manifest(out.root);
  manifest.verify("simulate", cfg.simulate_inputs());
  const bool needs_bdae =
      std::any_of(cfg.recon.modes.begin(), cfg.recon.modes.end(), [](Mode m) { return m != Mode::match; });
  if (needs_bdae) {
    manifest.verify("pretrain", cfg.pretrain_inputs());
  }

  const Problem problem = load_problem(cfg, out);
  const std::optional<Bdae> bdae = needs_bdae ? std::optional<Bdae>(load_pretrained(cfg, out)) : std::nullopt;

  std::vector<Task> tasks;
  for (Mode m : cfg.recon.modes) {
    for (std::size_t s = 0; s < cfg.phantom.slices; ++s) {
      for (double snr : cfg.acquisition.snr_db) {
        tasks.push_back({m, s, snr});
      }
    }
  }

  std::map<std::string, std::uint64_t> seeds;
  for (const Task& t : tasks) {
    seeds[fmt::format("recon/{}/{}/{}", to_string(t.mode), t.slice, snr_tag(t.snr_db))] =
        derive_seed(cfg.seed, fmt::format("recon/{}/{}/{}", to_string(t.mode), t.slice, snr_tag(t.snr_db)));
  }

  run_parallel(tasks, jobs, [&](const Task& t) {
    const fs::path dir = out.run_dir(t.mode, t.slice, t.snr_db);
    fs::create_directories(dir);
    const KSpaceData y = load_kspace(out.kspace(t.slice, t.snr_db));
    const QuantMaps truth = load_maps(out.phantom(t.slice));
    std::vector<TissueParams> qmaps;
    if (t.mode == Mode::match) {
      qmaps = dict_match(scaled_back_projection(y, *problem.op, cfg.recon.precondition_x0), problem.cdict);
    } else {
      ReconConfig rc;
      rc.mode = t.mode == Mode::bardip ? ReconMode::bardip : ReconMode::dipmrf;
      rc.lambda = cfg.recon.lambda;
      rc.lr = cfg.recon.lr;
      rc.iterations = cfg.recon.iterations;
      rc.log_every = cfg.recon.log_every;
      rc.seed = seeds.at(fmt::format("recon/{}/{}/{}", to_string(t.mode), t.slice, snr_tag(t.snr_db)));
      rc.unet.levels = cfg.recon.unet_levels;
      rc.unet.base_channels = cfg.recon.unet_base;
      rc.precondition_x0 = cfg.recon.precondition_x0;
      rc.checkpoint_dir = dir / "checkpoints";
      rc.log_path = dir / "log.csv";
      note("{} slice {} SNR {}: {} iterations", to_string(t.mode), t.slice, snr_tag(t.snr_db), rc.iterations);
      ReconResult r = reconstruct(y, *problem.op, *bdae, rc, &truth);
      qmaps = std::move(r.qmaps);
    }
    const QuantMaps est = as_maps(qmaps, truth);
    save_maps(dir / "maps.mrfq", est);
    const MetricsReport m = evaluate_maps(qmaps, truth);
    note("{} slice {} SNR {}: T1 MAPE {:.2f}%, T2 MAPE {:.2f}%, PD PSNR {:.2f} dB", to_string(t.mode), t.slice,
         snr_tag(t.snr_db), m.mape_t1, m.mape_t2, m.psnr_pd);
  });

  for (Mode m : cfg.recon.modes) {
    std::vector<fs::path> files;
    nlohmann::json mode_seeds = nlohmann::json::object();
    for (const Task& t : tasks) {
      if (t.mode != m) {
        continue;
      }
      const fs::path dir = out.run_dir(t.mode, t.slice, t.snr_db);
      files.push_back(dir / "maps.mrfq");
      if (m != Mode::match) {
        files.push_back(dir / "log.csv");
        const std::string label = fmt::format("recon/{}/{}/{}", to_string(m), t.slice, snr_tag(t.snr_db));
        mode_seeds[label] = seeds.at(label);
      }
    }
    manifest.record("reconstruct/" + to_string(m), cfg.recon_inputs(m), files, mode_seeds);
  }
}

void cmd_evaluate(const ExperimentConfig& cfg) {
  cfg.validate();
  const Layout out{cfg.out};
  Manifest manifest(out.root);
  manifest.verify("simulate", cfg.simulate_inputs());

  std::vector<Mode> modes;
  for (Mode m : {Mode::match, Mode::dipmrf, Mode::bardip}) {
    if (manifest.has("reconstruct/" + to_string(m))) {
      manifest.verify("reconstruct/" + to_string(m), cfg.recon_inputs(m));
      modes.push_back(m);
    }
  }
  if (modes.empty()) {
    throw ArtifactError(fmt::format("no reconstruction outputs in {}; run 'reconstruct' first", out.root.string()));
  }

  std::ofstream metrics(out.metrics(), std::ios::binary | std::ios::trunc);
  std::ofstream conv(out.convergence(), std::ios::binary | std::ios::trunc);
  metrics << "mode,slice,snr_db,mape_t1,mape_t2,psnr_pd,pixels\n";
  conv << "mode,snr_db,iter,mape_t1,mape_t2,psnr_pd,loss_k_normalized\n";

  for (Mode m : modes) {
    for (double snr : cfg.acquisition.snr_db) {
      MetricsReport mean{};
      std::vector<IterationLog> logs;
      for (std::size_t s = 0; s < cfg.phantom.slices; ++s) {
        const fs::path dir = out.run_dir(m, s, snr);
        const QuantMaps truth = load_maps(out.phantom(s));
        const QuantMaps est = load_maps(dir / "maps.mrfq");
        const MetricsReport r = evaluate_maps(est.qmaps, truth);
        write_previews(dir / "maps", est);
        metrics << fmt::format("{},{},{},{},{},{},{}\n", to_string(m), s, snr_tag(snr), fmt_value(r.mape_t1),
                               fmt_value(r.mape_t2), fmt_value(r.psnr_pd), r.pixels);
        mean.mape_t1 += r.mape_t1;
        mean.mape_t2 += r.mape_t2;
        mean.psnr_pd += r.psnr_pd;
        mean.pixels += r.pixels;
        if (m != Mode::match) {
          logs.push_back(IterationLog::read_csv(dir / "log.csv"));
        }
      }
      const double n = static_cast<double>(cfg.phantom.slices);
      metrics << fmt::format("{},mean,{},{},{},{},{}\n", to_string(m), snr_tag(snr), fmt_value(mean.mape_t1 / n),
                             fmt_value(mean.mape_t2 / n), fmt_value(mean.psnr_pd / n), mean.pixels);
      if (logs.empty()) {
        continue;
      }
      for (std::size_t row = 0; row < logs.front().rows.size(); ++row) {
        IterationRecord avg{};
        avg.iter = logs.front().rows[row].iter;
        avg.mape_t1 = avg.mape_t2 = avg.psnr_pd = 0.0;
        for (const auto& log : logs) {
          const auto& r = log.rows.at(row);
          avg.mape_t1 += r.mape_t1 / n;
          avg.mape_t2 += r.mape_t2 / n;
          avg.psnr_pd += r.psnr_pd / n;
          avg.loss_k_normalized += r.loss_k_normalized / n;
        }
        conv << fmt::format("{},{},{},{},{},{},{}\n", to_string(m), snr_tag(snr), avg.iter, fmt_value(avg.mape_t1),
                            fmt_value(avg.mape_t2), fmt_value(avg.psnr_pd), fmt_value(avg.loss_k_normalized));
      }
    }
  }
  metrics.close();
  conv.close();
  if (!metrics || !conv) {
    throw Error(fmt::format("cannot write evaluation outputs in {}", out.root.string()));
  }
  nlohmann::json inputs = cfg.simulate_inputs();
  for (Mode m : modes) {
    inputs["reconstruct/" + to_string(m)] = manifest.json()["stages"]["reconstruct/" + to_string(m)]["outputs"];
  }
  manifest.record("evaluate", inputs, {out.metrics(), out.convergence()});
  note("metrics written to {}", out.metrics().string());
}

} // namespace mrf
