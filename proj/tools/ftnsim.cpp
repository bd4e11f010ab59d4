// ftnsim: link-level simulation runner. Verbs cover network training,
// single-point evaluation, BER/BLER sweeps, tap inspection, complexity
// accounting, and a finite-difference gradient audit. Every invocation
// writes the resolved configuration next to its outputs so a run can be
// reproduced from the snapshot alone.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ftn/harness.hpp"

namespace {

using namespace ftn;

struct GlobalArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out = ".";
  long seed = -1;  // <0: keep config value
  int threads = 1;
};

void add_common(CLI::App* sub, GlobalArgs& g) {
  sub->add_option("--config", g.config_path, "configuration file");
  sub->add_option("--override", g.overrides,
                  "key=value or section.key=value, repeatable");
  sub->add_option("--out", g.out, "output directory");
  sub->add_option("--seed", g.seed, "override the run seed");
  sub->add_option("--threads", g.threads, "worker threads for sweeps")
      ->check(CLI::PositiveNumber);
}

config::Config resolve_config(const GlobalArgs& g) {
  config::Config cfg;
  if (!g.config_path.empty()) {
    try {
      cfg = config::Config::load(g.config_path);
    } catch (const missing_artifact_error& e) {
      // a bad --config path is a usage problem, not a missing run artifact
      throw param_error(e.what());
    }
  }
  for (const auto& ov : g.overrides) cfg.apply_override(ov);
  if (g.seed >= 0) {
    cfg.set("link", "seed", std::to_string(g.seed));
    cfg.set("train", "seed", std::to_string(g.seed));
  }
  return cfg;
}

std::string snapshot(const config::Config& cfg, const GlobalArgs& g) {
  std::filesystem::create_directories(g.out);
  const std::string path = g.out + "/resolved_config.cfg";
  cfg.save(path);
  return path;
}

// every known key, so leftover keys are typos rather than verb mismatches
struct Settings {
  harness::LinkConfig link;
  neural::TrainConfig train;
  receivers::CnnConfig cnn;
  receivers::DnnConfig dnn;
  std::string train_target;
  std::string cnn_model, dnn_model;
  std::string eval_receiver;
  double eval_ebn0 = 0.0;
};

Settings materialize(const config::Config& cfg) {
  Settings s;
  s.link = harness::link_from_config(cfg);
  s.train = harness::train_from_config(cfg);
  s.cnn = harness::cnn_from_config(cfg, s.link);
  s.dnn = harness::dnn_from_config(cfg, s.link);
  s.train_target = cfg.get_string("train", "target", "cnn");
  s.cnn_model = cfg.get_string("sweep", "cnn_model", "");
  s.dnn_model = cfg.get_string("sweep", "dnn_model", "");
  s.eval_receiver = cfg.get_string("eval", "receiver", "med");
  s.eval_ebn0 = cfg.get_double("eval", "ebn0_db", s.link.ebn0_grid_db.front());
  cfg.reject_unconsumed();
  s.link.validate();
  return s;
}

std::string tau_tag(double tau) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", tau);
  return buf;
}

dsp::IsiTaps link_taps(const harness::LinkConfig& link) {
  if (link.tau >= 1.0) return dsp::ideal_nyquist_taps(link.guard_span());
  return dsp::autocorr_taps(dsp::PulseSpec{}, link.tau, link.l_isi);
}

harness::ModelSet load_models(const Settings& s,
                              const std::vector<harness::Receiver>& rxs) {
  harness::ModelSet models;
  for (auto rx : rxs) {
    if (rx == harness::Receiver::cnn) {
      if (s.cnn_model.empty())
        throw param_error("sweep: no cnn model path configured for tau " +
                          tau_tag(s.link.tau) + " (set sweep.cnn_model)");
      models.cnn = harness::load_receiver_model(s.cnn_model, "cnn", s.link);
    } else if (rx == harness::Receiver::dnn) {
      if (s.dnn_model.empty())
        throw param_error("sweep: no dnn model path configured for tau " +
                          tau_tag(s.link.tau) + " (set sweep.dnn_model)");
      models.dnn = harness::load_receiver_model(s.dnn_model, "dnn", s.link);
    }
  }
  return models;
}

void print_records(const std::vector<harness::MetricRecord>& table) {
  std::printf("%-8s %6s %6s %8s %12s %12s %14s %8s\n", "receiver", "tau", "rc",
              "ebn0_db", "ber", "bler", "tp_bps", "blocks");
  for (const auto& r : table)
    std::printf("%-8s %6g %6g %8g %12.5g %12.5g %14.6g %8ld\n",
                r.receiver.c_str(), r.tau, r.rc, r.ebn0_db, r.ber, r.bler,
                r.throughput_bps, r.blocks);
}

// -------------------------------------------------------------------------
// train

int cmd_train(const GlobalArgs& g) {
  const config::Config cfg = resolve_config(g);
  const Settings s = materialize(cfg);
  snapshot(cfg, g);
  if (s.train_target != "cnn" && s.train_target != "dnn")
    throw param_error("train: target must be cnn or dnn, got '" + s.train_target + "'");

  const auto taps = link_taps(s.link);
  const auto channel = receivers::TrainChannel::make(taps, s.link.n_s, s.link.n_pad);

  neural::Model<float> model;
  if (s.train_target == "cnn")
    model = neural::build_model<float>(receivers::cnn_demapper_spec(s.cnn), 2,
                                       s.cnn.l_in());
  else
    model = neural::build_model<float>(receivers::mlp_equalizer_spec(s.dnn), 2,
                                       s.dnn.input_len);
  neural::init_params(model, s.train.seed);

  const std::string model_path =
      g.out + "/" + s.train_target + "_tau" + tau_tag(s.link.tau) + ".ftnm";
  const std::string history_path =
      g.out + "/train_history_" + s.train_target + ".csv";

  // max_epochs = 0 requests a dump of the untouched initialization
  const long budget = cfg.get_long("train", "max_epochs", s.train.max_epochs);
  if (budget == 0) {
    neural::save_model(model, model_path, harness::model_meta(s.train_target, s.link));
    std::ofstream hist(history_path);
    hist << "epoch,loss\n";
    std::printf("wrote fresh initialization to %s\n", model_path.c_str());
    return 0;
  }

  auto progress = [](long epoch, double loss, double lr) {
    if (epoch == 1 || epoch % 50 == 0)
      std::fprintf(stderr, "epoch %ld  loss %.6g  lr %.3g\n", epoch, loss, lr);
  };

  neural::TrainResult<float> result;
  if (s.train_target == "cnn") {
    auto batch = [&](long epoch) { return receivers::cnn_batch(channel, epoch, s.train); };
    result = neural::train(model, batch, receivers::cnn_loss, s.train, progress);
  } else {
    auto batch = [&](long epoch) { return receivers::dnn_batch(channel, epoch, s.train); };
    result = neural::train(model, batch, neural::mse_loss<float>, s.train, progress);
  }

  neural::save_model(result.best, model_path,
                     harness::model_meta(s.train_target, s.link));
  std::ofstream hist(history_path);
  hist << "epoch,loss\n";
  for (std::size_t i = 0; i < result.loss_history.size(); ++i)
    hist << (i + 1) << "," << harness::detail::fmt_double(result.loss_history[i])
         << "\n";
  std::printf("trained %s for tau %s: best loss %.6g at epoch %ld/%ld\n",
              s.train_target.c_str(), tau_tag(s.link.tau).c_str(),
              result.best_loss, result.best_epoch, result.epochs);
  std::printf("model: %s\nhistory: %s\n", model_path.c_str(), history_path.c_str());
  return 0;
}

// -------------------------------------------------------------------------
// eval / sweep

int cmd_eval(const GlobalArgs& g) {
  const config::Config cfg = resolve_config(g);
  const Settings s = materialize(cfg);
  snapshot(cfg, g);
  const auto rx = harness::parse_receiver(s.eval_receiver);
  const auto models = load_models(s, {rx});
  const auto rec = harness::run_point(s.link, s.eval_ebn0, rx, models, g.threads);
  print_records({rec});
  harness::write_csv(g.out + "/eval.csv", {rec});
  return 0;
}

int cmd_sweep(const GlobalArgs& g) {
  const config::Config cfg = resolve_config(g);
  const Settings s = materialize(cfg);
  snapshot(cfg, g);
  std::vector<harness::Receiver> rxs;
  for (const auto& name : s.link.receivers) rxs.push_back(harness::parse_receiver(name));
  const auto models = load_models(s, rxs);
  harness::validate_artifacts(s.link);  // fail fast, not one NaN row per point
  const auto table = harness::run_sweep(s.link, rxs, models, g.threads, &std::cerr);
  const std::string path = g.out + "/sweep.csv";
  harness::write_csv(path, table);
  print_records(table);
  std::printf("csv: %s\n", path.c_str());
  return 0;
}

// -------------------------------------------------------------------------
// taps

int cmd_taps(const GlobalArgs& g) {
  const config::Config cfg = resolve_config(g);
  const Settings s = materialize(cfg);
  snapshot(cfg, g);
  const auto taps = link_taps(s.link);
  const std::string path = g.out + "/taps.csv";
  std::ofstream f(path);
  f << "n,g\n";
  for (int n = -taps.l_isi; n <= taps.l_isi; ++n)
    f << n << "," << harness::detail::fmt_double(taps.at(n)) << "\n";
  double side = 0.0;
  for (int n = 1; n <= taps.l_isi; ++n) side = std::max(side, std::abs(taps.at(n)));
  std::printf("tau %g: span %d, g0 %.12g, max |side tap| %.6g\n", s.link.tau,
              taps.l_isi, taps.at(0), side);
  std::printf("csv: %s\n", path.c_str());
  return 0;
}

// -------------------------------------------------------------------------
// mac-report

int cmd_mac_report(const GlobalArgs& g) {
  const config::Config cfg = resolve_config(g);
  const Settings s = materialize(cfg);
  snapshot(cfg, g);
  auto cnn = neural::build_model<float>(receivers::cnn_demapper_spec(s.cnn), 2,
                                        s.cnn.l_in());
  auto dnn = neural::build_model<float>(receivers::mlp_equalizer_spec(s.dnn), 2,
                                        s.dnn.input_len);
  const long cnn_total = neural::mac_count(cnn, s.cnn.l_in());
  const long dnn_total = neural::mac_count(dnn, s.dnn.input_len);
  const double cnn_per = static_cast<double>(cnn_total) / s.cnn.n_s;
  const double dnn_per = static_cast<double>(dnn_total) / s.dnn.output_len;

  const std::string path = g.out + "/mac_report.csv";
  std::ofstream f(path);
  f << "network,total_macs,macs_per_symbol\n";
  f << "cnn," << cnn_total << "," << harness::detail::fmt_double(cnn_per) << "\n";
  f << "dnn," << dnn_total << "," << harness::detail::fmt_double(dnn_per) << "\n";
  std::printf("cnn: %ld MACs for %d symbols -> %.2f per symbol\n", cnn_total,
              s.cnn.n_s, cnn_per);
  std::printf("dnn: %ld MACs for %d symbols -> %.2f per symbol\n", dnn_total,
              s.dnn.output_len, dnn_per);
  std::printf("csv: %s\n", path.c_str());
  return 0;
}

// -------------------------------------------------------------------------
// gradcheck

struct GradCase {
  std::string kind;
  bool smooth = true;
  neural::Model<double> model;
  neural::Tensor<double> input{1, 1, 1};
  neural::Tensor<double> labels{1, 1, 1};
  bool use_lbce = false;
};

neural::Tensor<double> gauss_tensor(int b, int l, int c, std::uint64_t seed,
                                    double keep_away = 0.0) {
  neural::Tensor<double> t(b, l, c);
  rng::Sequence seq(rng::Stream::derive(seed, 0, 0, rng::purpose::train_data));
  for (auto& v : t.data) {
    v = seq.next_gauss();
    if (keep_away > 0.0 && std::abs(v) < keep_away)
      v = v < 0.0 ? -keep_away : keep_away;
  }
  return t;
}

std::vector<GradCase> gradcheck_cases() {
  using LS = neural::LayerSpec;
  std::vector<GradCase> cases;

  auto add = [&](const std::string& kind, std::vector<LS> specs, int in_ch,
                 int len, bool smooth, double keep_away = 0.0) {
    GradCase c;
    c.kind = kind;
    c.smooth = smooth;
    c.model = neural::build_model<double>(specs, in_ch, len);
    neural::init_params(c.model, 21);
    c.input = gauss_tensor(3, len, in_ch, 101 + cases.size(), keep_away);
    neural::Tensor<double> probe = c.input;
    c.model.mode = neural::Mode::train;
    const auto out = c.model.forward(probe);
    c.labels = gauss_tensor(out.batch, out.length, out.channels, 55 + cases.size());
    cases.push_back(std::move(c));
  };

  add("conv1d", {LS::conv(3, 3)}, 2, 8, true);
  add("batchnorm", {LS::bn()}, 3, 5, true);
  add("lrelu", {LS::lrelu(0.3)}, 2, 9, false, 0.05);
  add("dense", {LS::dense(5)}, 1, 6, true);
  add("residual", {LS::residual_begin(), LS::conv(6, 3), LS::residual_end()}, 4,
      7, true);

  GradCase lbce;
  lbce.kind = "lbce";
  lbce.use_lbce = true;
  lbce.model = neural::build_model<double>({LS::conv(2, 3)}, 2, 10);
  neural::init_params(lbce.model, 23);
  lbce.input = gauss_tensor(3, 10, 2, 300);
  lbce.labels = neural::Tensor<double>(3, 10, 2);
  rng::Sequence bits(rng::Stream::derive(7, 0, 0, rng::purpose::data_bits));
  for (auto& v : lbce.labels.data) v = static_cast<double>(bits.next_bit());
  cases.push_back(std::move(lbce));
  return cases;
}

int cmd_gradcheck(const GlobalArgs& g, const std::string& precision,
                  const std::string& corrupt) {
  const config::Config cfg = resolve_config(g);
  cfg.reject_unconsumed();  // gradcheck takes no config keys
  snapshot(cfg, g);
  const bool high = precision == "high";
  bool all_pass = true;
  std::string first_fail;

  for (auto& c : gradcheck_cases()) {
    const bool tight = high && c.smooth;
    const double h = tight ? 1e-6 : 1e-5;
    const double tol = tight ? 1e-7 : 1e-5;
    const bool sabotage = corrupt == c.kind;
    auto loss = [&](const neural::Tensor<double>& out,
                    const neural::Tensor<double>& ref) {
      auto r = c.use_lbce ? neural::lbce_loss(out, ref) : neural::mse_loss(out, ref);
      if (sabotage)  // negative-control fixture: report a wrong gradient
        for (auto& gv : r.second.data) gv *= 1.05;
      return r;
    };
    const auto rep = neural::gradcheck(c.model, c.input, c.labels, loss, h, tol);
    std::printf("[%s] %-10s max_rel %.3g over %ld entries (worst %s)\n",
                rep.pass ? "PASS" : "FAIL", c.kind.c_str(), rep.max_rel_err,
                rep.entries, rep.worst.c_str());
    if (!rep.pass) {
      all_pass = false;
      if (first_fail.empty()) first_fail = c.kind;
    }
  }
  if (!all_pass)
    throw numerical_error("gradcheck: gradient mismatch in layer kind '" +
                          first_fail + "'");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"link-level simulation laboratory"};
  app.require_subcommand(1);

  GlobalArgs g;
  std::string precision = "standard";
  std::string corrupt;

  auto* train = app.add_subcommand("train", "train a network receiver");
  add_common(train, g);
  auto* eval = app.add_subcommand("eval", "evaluate one receiver at one point");
  add_common(eval, g);
  auto* sweep = app.add_subcommand("sweep", "run the configured receiver sweep");
  add_common(sweep, g);
  auto* taps = app.add_subcommand("taps", "dump interference taps for the link");
  add_common(taps, g);
  auto* mac = app.add_subcommand("mac-report", "per-symbol complexity accounting");
  add_common(mac, g);
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  add_common(gc, g);
  gc->add_option("--precision", precision, "standard|high")
      ->check(CLI::IsMember({"standard", "high"}));
  gc->add_option("--corrupt", corrupt,
                 "test fixture: corrupt the backward pass of one layer kind");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) return cmd_train(g);
    if (eval->parsed()) return cmd_eval(g);
    if (sweep->parsed()) return cmd_sweep(g);
    if (taps->parsed()) return cmd_taps(g);
    if (mac->parsed()) return cmd_mac_report(g);
    if (gc->parsed()) return cmd_gradcheck(g, precision, corrupt);
    std::cerr << "ftnsim: no command given\n";
    return 2;
  } catch (const ftn::param_error& e) {
    std::cerr << "ftnsim: " << e.what() << "\n";
    return 2;
  } catch (const ftn::numerical_error& e) {
    std::cerr << "ftnsim: " << e.what() << "\n";
    return 3;
  } catch (const ftn::missing_artifact_error& e) {
    std::cerr << "ftnsim: " << e.what() << "\n";
    return 4;
  } catch (const ftn::format_error& e) {
    std::cerr << "ftnsim: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "ftnsim: " << e.what() << "\n";
    return 3;
  }
}
