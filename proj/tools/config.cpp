#include "experiment.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <openssl/evp.h>

#include <array>
#include <cmath>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

namespace mrf {

namespace pt = boost::property_tree;

std::string to_string(Mode m) {
  switch (m) {
  case Mode::bardip:
    return "bardip";
  case Mode::dipmrf:
    return "dipmrf";
  case Mode::match:
    return "match";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  if (s == "bardip") {
    return Mode::bardip;
  }
  if (s == "dipmrf") {
    return Mode::dipmrf;
  }
  if (s == "match") {
    return Mode::match;
  }
  throw ConfigError(fmt::format("unknown mode '{}' (expected bardip, dipmrf or match)", s));
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    item = trim(item);
    if (!item.empty()) {
      out.push_back(item);
    }
  }
  return out;
}

// Typed reads that remember which keys were consumed.
class Reader {
public:
  explicit Reader(const pt::ptree& tree) : tree_(tree) {}

  template <class T>
  void get(const std::string& section, const std::string& key, T& into) {
    const auto value = raw(section, key);
    if (!value) {
      return;
    }
    std::istringstream in(*value);
    T parsed{};
    if constexpr (std::is_same_v<T, bool>) {
      if (*value == "true" || *value == "1") {
        parsed = true;
      } else if (*value == "false" || *value == "0") {
        parsed = false;
      } else {
        throw bad(section, key, *value);
      }
    } else if constexpr (std::is_unsigned_v<T>) {
      if (value->find('-') != std::string::npos || !(in >> parsed) || !in.eof()) {
        throw bad(section, key, *value);
      }
    } else {
      if (!(in >> parsed) || !in.eof()) {
        throw bad(section, key, *value);
      }
    }
    into = parsed;
  }

  void get_path(const std::string& section, const std::string& key, fs::path& into, const fs::path& base) {
    if (const auto value = raw(section, key)) {
      const fs::path p(*value);
      into = p.is_relative() && !value->empty() ? base / p : p;
    }
  }

  std::optional<std::string> raw(const std::string& section, const std::string& key) {
    used_.insert(section + "." + key);
    const auto node = tree_.get_child_optional(pt::ptree::path_type(section + "." + key, '.'));
    if (!node) {
      return std::nullopt;
    }
    return trim(node->data());
  }

  void reject_unknown() const {
    for (const auto& [section, body] : tree_) {
      if (body.empty()) {
        throw ConfigError(fmt::format("key '{}' must be inside a section", section));
      }
      for (const auto& [key, value] : body) {
        if (!used_.count(section + "." + key)) {
          throw ConfigError(fmt::format("unknown config key [{}] {}", section, key));
        }
      }
    }
  }

private:
  static ConfigError bad(const std::string& section, const std::string& key, const std::string& value) {
    return ConfigError(fmt::format("[{}] {} = '{}' is not a valid value", section, key, value));
  }

  const pt::ptree& tree_;
  std::set<std::string> used_;
};

void require(bool ok, const std::string& what) {
  if (!ok) {
    throw ConfigError(what);
  }
}

} // namespace

ExperimentConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) {
    throw ConfigError(fmt::format("config file {} does not exist", path.string()));
  }
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(e.what());
  }
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  ExperimentConfig c;
  Reader r(tree);

  r.get("experiment", "seed", c.seed);
  r.get_path("experiment", "out", c.out, base);

  r.get("sequence", "timeframes", c.sequence.timeframes);
  r.get("sequence", "tr_ms", c.sequence.tr_ms);
  r.get("sequence", "te_ms", c.sequence.te_ms);
  r.get("sequence", "ti_ms", c.sequence.ti_ms);
  r.get_path("sequence", "schedule", c.sequence.schedule, base);

  auto& d = c.dictionary;
  r.get("dictionary", "t1_first", d.t1_first);
  r.get("dictionary", "t1_last", d.t1_last);
  r.get("dictionary", "t1_step", d.t1_step);
  r.get("dictionary", "t2_first", d.t2_first);
  r.get("dictionary", "t2_last", d.t2_last);
  r.get("dictionary", "t2_step", d.t2_step);
  r.get("dictionary", "channels", d.channels);

  r.get("phantom", "height", c.phantom.height);
  r.get("phantom", "width", c.phantom.width);
  r.get("phantom", "slices", c.phantom.slices);

  r.get("trajectory", "samples", c.trajectory.samples);
  r.get("trajectory", "density_exponent", c.trajectory.density_exponent);
  r.get("trajectory", "rotations", c.trajectory.rotations);

  r.get("acquisition", "coils", c.acquisition.coils);
  if (const auto snr = r.raw("acquisition", "snr_db")) {
    c.acquisition.snr_db.clear();
    for (const auto& item : split_list(*snr)) {
      if (item == "inf") {
        c.acquisition.snr_db.push_back(bardip::kNoiseless);
        continue;
      }
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(item, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      require(used == item.size(), fmt::format("[acquisition] snr_db entry '{}' is not a number", item));
      c.acquisition.snr_db.push_back(v);
    }
  }

  auto& b = c.bdae;
  r.get("bdae", "epochs", b.epochs);
  r.get("bdae", "batch_size", b.batch_size);
  r.get("bdae", "hidden", b.hidden);
  r.get("bdae", "lr", b.lr);
  r.get("bdae", "lr_final", b.lr_final);
  r.get("bdae", "noise_sigma", b.noise_sigma);
  r.get("bdae", "lambda_e", b.lambda_e);

  auto& rc = c.recon;
  if (const auto modes = r.raw("recon", "modes")) {
    rc.modes.clear();
    for (const auto& m : split_list(*modes)) {
      rc.modes.push_back(parse_mode(m));
    }
  }
  r.get("recon", "lambda", rc.lambda);
  r.get("recon", "lr", rc.lr);
  r.get("recon", "iterations", rc.iterations);
  r.get("recon", "log_every", rc.log_every);
  r.get("recon", "unet_levels", rc.unet_levels);
  r.get("recon", "unet_base", rc.unet_base);
  r.get("recon", "precondition_x0", rc.precondition_x0);

  r.reject_unknown();
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  require(!out.empty(), "[experiment] out must be set");
  require(sequence.timeframes >= 1, "[sequence] timeframes must be >= 1");
  require(sequence.tr_ms > 0 && sequence.te_ms > 0 && sequence.te_ms < sequence.tr_ms && sequence.ti_ms >= 0,
          "[sequence] need 0 < te_ms < tr_ms and ti_ms >= 0");
  require(sequence.schedule.empty() || fs::exists(sequence.schedule),
          fmt::format("[sequence] schedule {} does not exist", sequence.schedule.string()));
  const auto& d = dictionary;
  require(d.t1_first > 0 && d.t1_step > 0 && d.t1_last >= d.t1_first, "[dictionary] invalid T1 range");
  require(d.t2_first > 0 && d.t2_step > 0 && d.t2_last >= d.t2_first, "[dictionary] invalid T2 range");
  require(d.channels >= 1 && d.channels <= sequence.timeframes, "[dictionary] need 1 <= channels <= timeframes");
  require(phantom.height >= 32 && phantom.width >= 32, "[phantom] height and width must be >= 32");
  require(phantom.slices >= 1, "[phantom] slices must be >= 1");
  require(trajectory.samples >= 1, "[trajectory] samples must be >= 1");
  require(trajectory.density_exponent > 0, "[trajectory] density_exponent must be > 0");
  require(trajectory.rotations >= 1, "[trajectory] rotations must be >= 1");
  require(acquisition.coils >= 1, "[acquisition] coils must be >= 1");
  require(!acquisition.snr_db.empty(), "[acquisition] snr_db needs at least one value");
  for (double s : acquisition.snr_db) {
    require(!std::isnan(s), "[acquisition] snr_db values must be numbers");
  }
  require(bdae.epochs >= 1 && bdae.batch_size >= 1 && bdae.hidden >= 1, "[bdae] epochs, batch_size, hidden >= 1");
  require(bdae.lr > 0 && bdae.lr_final > 0 && bdae.lr_final <= bdae.lr, "[bdae] need 0 < lr_final <= lr");
  require(bdae.noise_sigma >= 0 && bdae.lambda_e >= 0, "[bdae] noise_sigma and lambda_e must be >= 0");
  require(!recon.modes.empty(), "[recon] modes needs at least one entry");
  require(recon.lambda >= 0 && std::isfinite(recon.lambda), "[recon] lambda must be finite and >= 0");
  require(recon.lr > 0, "[recon] lr must be > 0");
  require(recon.iterations >= 1 && recon.log_every >= 1, "[recon] iterations and log_every must be >= 1");
  require(recon.unet_levels >= 1 && recon.unet_base >= 1, "[recon] unet_levels and unet_base must be >= 1");
}

nlohmann::json ExperimentConfig::simulate_inputs() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["sequence"] = {{"timeframes", sequence.timeframes},
                   {"tr_ms", sequence.tr_ms},
                   {"te_ms", sequence.te_ms},
                   {"ti_ms", sequence.ti_ms},
                   {"schedule_sha256", sequence.schedule.empty() ? "" : sha256_file(sequence.schedule)}};
  const auto& d = dictionary;
  j["dictionary"] = {{"t1", {d.t1_first, d.t1_last, d.t1_step}},
                     {"t2", {d.t2_first, d.t2_last, d.t2_step}},
                     {"channels", d.channels}};
  j["phantom"] = {{"height", phantom.height}, {"width", phantom.width}, {"slices", phantom.slices}};
  j["trajectory"] = {{"samples", trajectory.samples},
                     {"density_exponent", trajectory.density_exponent},
                     {"rotations", trajectory.rotations}};
  nlohmann::json snr = nlohmann::json::array();
  for (double s : acquisition.snr_db) {
    snr.push_back(snr_tag(s));
  }
  j["acquisition"] = {{"coils", acquisition.coils}, {"snr_db", snr}};
  return j;
}

nlohmann::json ExperimentConfig::pretrain_inputs() const {
  nlohmann::json j = simulate_inputs();
  j["bdae"] = {{"epochs", bdae.epochs},         {"batch_size", bdae.batch_size}, {"hidden", bdae.hidden},
               {"lr", bdae.lr},                 {"lr_final", bdae.lr_final},     {"noise_sigma", bdae.noise_sigma},
               {"lambda_e", bdae.lambda_e}};
  return j;
}

nlohmann::json ExperimentConfig::recon_inputs(Mode mode) const {
  if (mode == Mode::match) {
    nlohmann::json j = simulate_inputs();
    j["recon"] = {{"precondition_x0", recon.precondition_x0}};
    return j;
  }
  nlohmann::json j = pretrain_inputs();
  j["recon"] = {{"lambda", recon.lambda},           {"lr", recon.lr},
                {"iterations", recon.iterations},   {"log_every", recon.log_every},
                {"unet_levels", recon.unet_levels}, {"unet_base", recon.unet_base},
                {"precondition_x0", recon.precondition_x0}};
  return j;
}

std::string snr_tag(double snr_db) {
  return std::isinf(snr_db) ? std::string("inf") : fmt::format("{:g}", snr_db);
}

std::uint64_t derive_seed(std::uint64_t root, const std::string& label) {
  const std::string msg = fmt::format("{}/{}", root, label);
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_Digest(msg.data(), msg.size(), digest.data(), &len, EVP_sha256(), nullptr);
  std::uint64_t seed = 0;
  for (int i = 0; i < 8; ++i) {
    seed = (seed << 8) | digest[static_cast<std::size_t>(i)];
  }
  return seed;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ArtifactError(fmt::format("cannot read {}", path.string()));
  }
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest.data(), &len);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex += fmt::format("{:02x}", digest[i]);
  }
  return hex;
}

} // namespace mrf
