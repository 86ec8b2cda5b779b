#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "ppcn/error.hpp"
#include "ppcn/export.hpp"
#include "ppcn/ppcn.hpp"
#include "ppcn/ptns.hpp"
#include "ppcn/scenegen.hpp"
#include "ppcn/training.hpp"

namespace ppcn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kRunManifestVersion = 1;

struct TrainFlags {
  std::string data;
  std::string out;
  std::string structure = "4-8-16-8-3";
  double lr = 0.003;
  int batch = 2;
  int epochs = 1;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  std::string aop = "swapped";
  std::string loss = "l2";
  bool bn_before_relu = false;
  int checkpoint_every = 0;
  std::string resume;
  bool record_time = false;
  bool log_train_eval = false;
  // joint only
  int outputs = 0;
  std::string strategy = "ppcn";
  std::string head_widths = "16,16";
  bool freeze_ppcn = false;

  CLI::Option* epochs_opt = nullptr;
};

void add_common_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--data", f.data, "Dataset directory (defaults to the one recorded when resuming)");
  cmd->add_option("--out", f.out, "Output directory")->required();
  cmd->add_option("--structure", f.structure, "PPCN structure, e.g. 4-8-16-8-3")->capture_default_str();
  cmd->add_option("--lr", f.lr, "Learning rate")->capture_default_str();
  cmd->add_option("--batch", f.batch, "Batch size")->capture_default_str();
  f.epochs_opt = cmd->add_option("--epochs", f.epochs, "Epochs (when resuming: new total)")->capture_default_str();
  cmd->add_option("--momentum", f.momentum, "SGD momentum")->capture_default_str();
  cmd->add_option("--seed", f.seed, "Seed for initialization and shuffling")->capture_default_str();
  cmd->add_option("--aop-convention", f.aop, "AoP convention: swapped|standard")->capture_default_str();
  cmd->add_option("--loss", f.loss, "Fitting norm: l2|squared")->capture_default_str();
  cmd->add_flag("--bn-before-relu", f.bn_before_relu, "Fusion unit order Conv -> BN -> ReLU");
  cmd->add_option("--checkpoint-every", f.checkpoint_every, "Checkpoint every E epochs (0: only at exit)")
      ->capture_default_str();
  cmd->add_option("--resume", f.resume, "Continue from a checkpoint");
  cmd->add_flag("--record-time", f.record_time, "Write wall-clock seconds into metrics.csv");
  cmd->add_flag("--log-train-eval", f.log_train_eval, "Also evaluate the training split every epoch");
}

void add_joint_flags(CLI::App* cmd, TrainFlags& f, bool single_outputs = true) {
  if (single_outputs)
    cmd->add_option("--outputs", f.outputs, "PPCN output count x (replaces the structure's last size)");
  cmd->add_option("--strategy", f.strategy, "ppcn, or a baseline: raw4|s0pa|s0p|p|s0")->capture_default_str();
  cmd->add_option("--head-widths", f.head_widths, "Head hidden widths A,B")->capture_default_str();
  cmd->add_flag("--freeze-ppcn", f.freeze_ppcn, "Keep PPCN weights at initialization");
}

std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> items;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, sep)) items.push_back(item);
  return items;
}

int parse_int(const std::string& text, const std::string& flag) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw ParseError(flag + ": '" + text + "' is not an integer");
}

std::optional<polar::InputStrategy> parse_strategy_flag(const std::string& text) {
  if (text == "ppcn") return std::nullopt;
  try {
    return polar::parse_strategy(text);
  } catch (const Error&) {
    throw ParseError("--strategy: unknown strategy '" + text + "' (expected ppcn|raw4|s0pa|s0p|p|s0)");
  }
}

train::TrainConfig make_config(const TrainFlags& f, train::TrainMode mode) {
  train::TrainConfig c;
  try {
    c.structure = nn::parse_structure(f.structure);
  } catch (const ParseError& e) {
    throw ParseError(std::string("--structure: ") + e.what());
  }
  c.epochs = f.epochs;
  c.batch_size = f.batch;
  c.learning_rate = f.lr;
  c.momentum = f.momentum;
  c.seed = f.seed;
  c.mode = mode;
  try {
    c.aop_convention = polar::parse_convention(f.aop);
  } catch (const Error&) {
    throw ParseError("--aop-convention: expected swapped|standard, got '" + f.aop + "'");
  }
  if (f.loss == "l2") c.fit_norm = loss::FitNorm::L2;
  else if (f.loss == "squared") c.fit_norm = loss::FitNorm::SquaredL2;
  else throw ParseError("--loss: expected l2|squared, got '" + f.loss + "'");
  c.ppcn.bn_before_relu = f.bn_before_relu;
  c.log_train_eval = f.log_train_eval;
  c.dataset = f.data;
  if (mode == train::TrainMode::Joint) {
    c.baseline = parse_strategy_flag(f.strategy);
    c.output_count = f.outputs;
    const auto widths = split_list(f.head_widths, ',');
    if (widths.size() != 2) throw ParseError("--head-widths: expected two comma-separated widths");
    c.head.width1 = parse_int(widths[0], "--head-widths");
    c.head.width2 = parse_int(widths[1], "--head-widths");
    c.freeze_ppcn = f.freeze_ppcn;
  }
  if (f.checkpoint_every < 0) throw ConfigError("--checkpoint-every must be >= 0");
  train::validate(c);
  return c;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

/// Written last; lists every output relative to `dir`.
void write_run_manifest(const fs::path& dir, const std::string& command, const json& config,
                        const std::vector<std::string>& outputs) {
  for (const auto& name : outputs)
    if (!fs::exists(dir / name)) throw IoError("expected output missing: " + (dir / name).string());
  const json j = {{"format", "ppcn-run"},
                  {"format_version", kRunManifestVersion},
                  {"command", command},
                  {"config", config},
                  {"formats",
                   {{"ptns", io::kPtnsVersion},
                    {"checkpoint", train::Checkpoint::kFormatVersion},
                    {"dataset", scene::kDatasetFormatVersion},
                    {"run_manifest", kRunManifestVersion}}},
                  {"outputs", outputs}};
  io::write_text_atomic(dir / "run_manifest.json", j.dump(2) + "\n");
}

std::string fmt(double v) {
  if (std::isnan(v)) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void print_row(std::ostream& out, const train::MetricsRow& r, int total) {
  out << "epoch " << r.epoch << "/" << total << "  train_loss " << fmt(r.train_loss) << "  val_loss "
      << fmt(r.val.loss);
  if (!std::isnan(r.val.accuracy)) out << "  val_acc " << fmt(r.val.accuracy);
  out << "\n";
}

// ---------------------------------------------------------------- commands

int cmd_gen_data(const std::string& out_dir, std::size_t count, const std::string& size, std::uint64_t seed,
                 const std::optional<double>& noise, const std::string& family, std::ostream& out) {
  if (count < 1) throw ConfigError("--count: count must be ≥ 1");
  const auto x = size.find('x');
  if (x == std::string::npos) throw ParseError("--size: expected WxH, got '" + size + "'");
  const int w = parse_int(size.substr(0, x), "--size"), h = parse_int(size.substr(x + 1), "--size");
  const auto names = scene::family_names();
  if (std::ranges::find(names, family) == names.end())
    throw ParseError("--scene-family: unknown family '" + family + "'");
  scene::SceneSpec spec = scene::family_spec(family, w, h);
  spec.seed = seed;
  if (noise) {
    if (!(*noise >= 0.0)) throw ConfigError("--noise must be >= 0");
    spec.noise_sigma = *noise;
  }
  try {
    scene::validate(spec);
  } catch (const UsageError& e) {
    throw ConfigError(std::string("--size: ") + e.what());
  }
  scene::Dataset ds;
  ds.manifest.count = count;
  ds.manifest.width = w;
  ds.manifest.height = h;
  ds.manifest.seed = seed;
  ds.manifest.num_classes = spec.num_classes();
  ds.manifest.family = family;
  ds.manifest.spec = spec;
  ds.samples = scene::generate_dataset(spec, count);
  scene::write_dataset(out_dir, ds);
  out << "wrote " << count << " samples (" << w << "x" << h << ", family " << family << ") to " << out_dir << "\n";
  return kOk;
}

int run_training(const TrainFlags& f, train::TrainMode mode, const std::string& command, std::ostream& out) {
  std::optional<train::Trainer> trainer;
  std::string dataset_path = f.data;
  if (!f.resume.empty()) {
    const auto ckpt = train::load_checkpoint(f.resume);
    if (ckpt.config.mode != mode)
      throw ConfigError("--resume: checkpoint was written by '" + train::to_string(ckpt.config.mode) +
                        "' training, not this command");
    if (dataset_path.empty()) dataset_path = ckpt.config.dataset;
    const auto ds = scene::read_dataset(dataset_path);
    trainer.emplace(train::Trainer::resume(ckpt, ds, f.epochs_opt->count() ? f.epochs : 0));
    out << "resuming at epoch " << ckpt.epoch << " from " << f.resume << "\n";
  } else {
    if (dataset_path.empty()) throw ConfigError("--data is required");
    const auto config = make_config(f, mode);
    const auto ds = scene::read_dataset(dataset_path);
    trainer.emplace(config, ds);
  }
  const fs::path dir = f.out;
  ensure_dir(dir);
  std::vector<std::string> outputs;
  const int k = trainer->num_classes();
  const bool joint = mode == train::TrainMode::Joint;
  auto write_metrics = [&] {
    io::write_text_atomic(dir / "metrics.csv",
                          train::metrics_csv(trainer->history(), joint ? k : 0, f.record_time));
  };
  trainer->run([&](const train::MetricsRow& row) {
    print_row(out, row, trainer->config().epochs);
    write_metrics();
    if (f.checkpoint_every > 0 && row.epoch % f.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "ckpt_epoch%04d.ckpt", row.epoch);
      train::save_checkpoint(dir / name, trainer->checkpoint());
      outputs.emplace_back(name);
    }
  });
  write_metrics();
  train::save_checkpoint(dir / "final.ckpt", trainer->checkpoint());
  outputs.insert(outputs.begin(), {"metrics.csv", "final.ckpt"});
  write_run_manifest(dir, command, train::to_json(trainer->config()), outputs);
  return kOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data, const std::string& split_name,
             const std::string& out_file, std::ostream& out) {
  train::Split split;
  if (split_name == "train") split = train::Split::Train;
  else if (split_name == "val") split = train::Split::Val;
  else if (split_name == "all") split = train::Split::All;
  else throw ParseError("--split: expected train|val|all, got '" + split_name + "'");
  const auto ckpt = train::load_checkpoint(ckpt_path);
  const auto ds = scene::read_dataset(data.empty() ? ckpt.config.dataset : data);
  const auto r = train::evaluate(ckpt, ds, split);
  const int k = ckpt.config.mode == train::TrainMode::Joint ? ds.manifest.num_classes : 0;

  std::string csv = "split,loss,accuracy";
  for (int c = 1; c <= k; ++c) csv += ",iou_class" + std::to_string(c);
  csv += "\n" + split_name;
  auto num = [](double v) {
    if (std::isnan(v)) return std::string();
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };
  csv += "," + num(r.loss) + "," + num(r.accuracy);
  for (double v : r.iou) csv += "," + num(v);
  csv += "\n";
  out << csv;
  if (!out_file.empty()) io::write_text_atomic(out_file, csv);
  return kOk;
}

struct SweepFlags {
  std::string mode = "joint";
  std::string structures, outputs, strategies, seeds;
  int jobs = 1;
};

int cmd_sweep(const TrainFlags& f, const SweepFlags& s, std::ostream& out) {
  train::TrainMode mode;
  if (s.mode == "joint") mode = train::TrainMode::Joint;
  else if (s.mode == "fit") mode = train::TrainMode::FitParams;
  else throw ParseError("--mode: expected fit|joint, got '" + s.mode + "'");
  if (f.data.empty()) throw ConfigError("--data is required");
  if (s.jobs < 1) throw ConfigError("--jobs must be >= 1");
  if (mode == train::TrainMode::FitParams && !(s.outputs.empty() && s.strategies.empty()))
    throw ConfigError("--outputs and --strategies apply to joint sweeps only");

  const auto structures = s.structures.empty() ? std::vector<std::string>{f.structure} : split_list(s.structures, ',');
  std::vector<int> outputs{f.outputs};
  if (!s.outputs.empty()) {
    outputs.clear();
    for (const auto& t : split_list(s.outputs, ',')) outputs.push_back(parse_int(t, "--outputs"));
  }
  const auto strategies = s.strategies.empty() ? std::vector<std::string>{f.strategy} : split_list(s.strategies, ',');
  std::vector<std::uint64_t> seeds{f.seed};
  if (!s.seeds.empty()) {
    seeds.clear();
    for (const auto& t : split_list(s.seeds, ',')) seeds.push_back(static_cast<std::uint64_t>(parse_int(t, "--seeds")));
  }

  std::vector<train::SweepPoint> grid;
  for (const auto& st : structures)
    for (int x : outputs)
      for (const auto& strat : strategies)
        for (auto seed : seeds) {
          TrainFlags g = f;
          g.structure = st;
          g.outputs = x;
          g.strategy = strat;
          g.seed = seed;
          std::vector<std::string> parts;
          if (!s.structures.empty() || mode == train::TrainMode::FitParams) parts.push_back(st);
          if (!s.outputs.empty()) parts.push_back("x=" + std::to_string(x));
          if (!s.strategies.empty()) parts.push_back(strat);
          std::string label;
          for (const auto& p : parts) label += (label.empty() ? "" : "/") + p;
          grid.push_back({label.empty() ? "base" : label, make_config(g, mode)});
        }

  const auto ds = scene::read_dataset(f.data);
  const auto rows = train::sweep(grid, ds, s.jobs);
  const int k = mode == train::TrainMode::Joint ? ds.manifest.num_classes : 0;
  const auto csv = train::sweep_csv(rows, k);
  const fs::path dir = f.out;
  ensure_dir(dir);
  io::write_text_atomic(dir / "sweep.csv", csv);
  out << csv;
  json configs = json::array();
  for (const auto& p : grid) configs.push_back({{"label", p.label}, {"config", train::to_json(p.config)}});
  write_run_manifest(dir, "sweep", {{"jobs", s.jobs}, {"points", configs}}, {"sweep.csv"});
  return kOk;
}

int cmd_export(const std::string& ckpt_path, const std::string& input, const std::string& out_dir,
               const std::string& format, std::ostream& out) {
  const auto depth = img::parse_depth(format);
  const auto ckpt = train::load_checkpoint(ckpt_path);
  auto model = img::load_ppcn(ckpt);
  const auto raw = scene::read_raw_sample(input);
  const auto x = polar::assemble_strategy<float>(raw, polar::InputStrategy::Raw4, ckpt.config.aop_convention);
  const auto y = model.forward(x, nn::Mode::Infer);
  const auto files = img::export_channels(y, out_dir, depth);
  std::vector<std::string> names;
  for (const auto& p : files) names.push_back(p.filename().string());
  write_run_manifest(out_dir, "export",
                     {{"checkpoint", ckpt_path}, {"input", input}, {"format", format},
                      {"model", train::to_json(ckpt.config)}},
                     names);
  out << "wrote " << y.c() << " channel images to " << out_dir << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Learned polarization-parameter images: data generation, training and export"};
  app.name("ppcn");
  app.require_subcommand(1);

  std::string gd_out, gd_size = "64x64", gd_family = "generic";
  std::size_t gd_count = 200;
  std::uint64_t gd_seed = 0;
  std::optional<double> gd_noise;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic polarimetric dataset");
  gen->add_option("--out", gd_out, "Dataset directory")->required();
  gen->add_option("--count", gd_count, "Number of samples")->capture_default_str();
  gen->add_option("--size", gd_size, "Image size WxH")->capture_default_str();
  gen->add_option("--seed", gd_seed, "Dataset seed")->capture_default_str();
  gen->add_option("--noise", gd_noise, "Gaussian noise sigma (default: the family's)");
  gen->add_option("--scene-family", gd_family, "generic|camouflage|distinct")->capture_default_str();

  std::string cp_structure;
  auto* cp = app.add_subcommand("count-params", "Print the PPCN parameter count for a structure");
  cp->add_option("--structure", cp_structure, "Structure, e.g. 4-8-16-8-3")->required();

  TrainFlags fit_flags;
  auto* fit = app.add_subcommand("fit", "Train a PPCN to reproduce S0, DoLP and AoP");
  add_common_train_flags(fit, fit_flags);

  TrainFlags joint_flags;
  joint_flags.lr = 0.01;
  auto* joint = app.add_subcommand("train-joint", "Train PPCN and segmentation head end to end");
  add_common_train_flags(joint, joint_flags);
  add_joint_flags(joint, joint_flags);

  std::string ev_ckpt, ev_data, ev_split = "val", ev_out;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint (inference mode)");
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--data", ev_data, "Dataset directory (default: the one it was trained on)");
  ev->add_option("--split", ev_split, "train|val|all")->capture_default_str();
  ev->add_option("--out", ev_out, "Also write the result row to this CSV file");

  TrainFlags sw_flags;
  sw_flags.lr = 0.01;
  SweepFlags sw;
  auto* swc = app.add_subcommand("sweep", "Train every point of a grid and tabulate final validation metrics");
  add_common_train_flags(swc, sw_flags);
  add_joint_flags(swc, sw_flags, false);
  swc->add_option("--mode", sw.mode, "fit|joint")->capture_default_str();
  swc->add_option("--structures", sw.structures, "Comma-separated structures");
  swc->add_option("--outputs", sw.outputs, "Comma-separated PPCN output counts");
  swc->add_option("--strategies", sw.strategies, "Comma-separated: ppcn,raw4,s0pa,s0p,p,s0");
  swc->add_option("--seeds", sw.seeds, "Comma-separated seeds");
  swc->add_option("--jobs", sw.jobs, "Grid points trained concurrently")->capture_default_str();

  std::string ex_ckpt, ex_input, ex_out, ex_format = "png8";
  auto* ex = app.add_subcommand("export", "Write PPCN output channels as grayscale images");
  ex->add_option("--checkpoint", ex_ckpt, "Checkpoint file")->required();
  ex->add_option("--input", ex_input, "Raw sample file (4 x H x W PTNS)")->required();
  ex->add_option("--out", ex_out, "Output directory")->required();
  ex->add_option("--format", ex_format, "png8|png16")->capture_default_str();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(gd_out, gd_count, gd_size, gd_seed, gd_noise, gd_family, out);
    if (*cp) {
      nn::StructureSpec spec;
      try {
        spec = nn::parse_structure(cp_structure);
      } catch (const ParseError& e) {
        throw ParseError(std::string("--structure: ") + e.what());
      }
      out << nn::parameter_count(spec) << "\n";
      return kOk;
    }
    if (*fit) return run_training(fit_flags, train::TrainMode::FitParams, "fit", out);
    if (*joint) return run_training(joint_flags, train::TrainMode::Joint, "train-joint", out);
    if (*ev) return cmd_eval(ev_ckpt, ev_data, ev_split, ev_out, out);
    if (*swc) return cmd_sweep(sw_flags, sw, out);
    if (*ex) return cmd_export(ex_ckpt, ex_input, ex_out, ex_format, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInternal;
  }
  return kUsage;
}

}  // namespace ppcn::cli
