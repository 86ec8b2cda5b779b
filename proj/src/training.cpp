#include "ppcn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "ppcn/parallel.hpp"
#include "ppcn/ptns.hpp"

namespace ppcn::train {

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

enum Stream : std::uint64_t { kPpcnInit = 1, kHeadInit = 2, kShuffle = 3 };

bool same_double(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

polar::InputStrategy input_strategy(const TrainConfig& c) {
  if (c.mode == TrainMode::Joint && c.baseline) return *c.baseline;
  return polar::InputStrategy::Raw4;
}

bool uses_ppcn(const TrainConfig& c) { return c.mode == TrainMode::FitParams || !c.baseline; }

}  // namespace

bool EvalResult::operator==(const EvalResult& o) const {
  if (!same_double(loss, o.loss) || !same_double(accuracy, o.accuracy) || iou.size() != o.iou.size())
    return false;
  for (std::size_t i = 0; i < iou.size(); ++i)
    if (!same_double(iou[i], o.iou[i])) return false;
  return true;
}

std::string to_string(TrainMode mode) { return mode == TrainMode::FitParams ? "fit" : "joint"; }

nn::StructureSpec TrainConfig::effective_structure() const {
  nn::StructureSpec s = structure;
  if (mode == TrainMode::Joint && output_count > 0 && !s.sizes.empty()) s.sizes.back() = output_count;
  return s;
}

void validate(const TrainConfig& c) {
  if (c.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (c.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate))
    throw ConfigError("learning rate must be finite and >= 0");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (c.structure.sizes.size() < 2) throw ConfigError("structure needs at least two sizes");
  for (int s : c.structure.sizes)
    if (s < 1) throw ConfigError("structure sizes must be >= 1");
  if (c.output_count < 0) throw ConfigError("output count must be >= 0");
  const auto eff = c.effective_structure();
  if (c.mode == TrainMode::FitParams) {
    if (eff.output_channels() != 3)
      throw ConfigError("parameter fitting needs 3 outputs (S0, DoLP, AoP); structure " + eff.str() + " has " +
                        std::to_string(eff.output_channels()));
    if (c.baseline) throw ConfigError("baseline strategies apply to joint training only");
  }
  if (uses_ppcn(c)) {
    if (eff.input_channels() != 4)
      throw ConfigError("PPCN input must take the 4 raw images; structure " + eff.str() + " expects " +
                        std::to_string(eff.input_channels()));
    const bool bn_trains = eff.fusion_units() > 0 && !(c.mode == TrainMode::Joint && c.freeze_ppcn);
    if (bn_trains && c.batch_size < 2) throw ConfigError("batch size must be >= 2 when batch normalization trains");
  }
  if (c.head.width1 < 1 || c.head.width2 < 1) throw ConfigError("head widths must be >= 1");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"structure", c.structure.str()},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"seed", c.seed},
          {"mode", to_string(c.mode)},
          {"baseline", c.baseline ? nlohmann::json(std::string(polar::to_string(*c.baseline))) : nlohmann::json()},
          {"output_count", c.output_count},
          {"aop_convention", std::string(polar::to_string(c.aop_convention))},
          {"fit_norm", c.fit_norm == loss::FitNorm::L2 ? "l2" : "squared"},
          {"bn_before_relu", c.ppcn.bn_before_relu},
          {"bn_eps", c.ppcn.bn_eps},
          {"bn_momentum", c.ppcn.bn_momentum},
          {"head_width1", c.head.width1},
          {"head_width2", c.head.width2},
          {"freeze_ppcn", c.freeze_ppcn},
          {"log_train_eval", c.log_train_eval},
          {"dataset", c.dataset}};
}

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.structure = nn::parse_structure(j.at("structure").get<std::string>());
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  const auto mode = j.at("mode").get<std::string>();
  if (mode == "fit") c.mode = TrainMode::FitParams;
  else if (mode == "joint") c.mode = TrainMode::Joint;
  else throw FormatError("unknown training mode '" + mode + "'");
  if (!j.at("baseline").is_null()) c.baseline = polar::parse_strategy(j.at("baseline").get<std::string>());
  c.output_count = j.at("output_count").get<int>();
  c.aop_convention = polar::parse_convention(j.at("aop_convention").get<std::string>());
  c.fit_norm = j.at("fit_norm").get<std::string>() == "l2" ? loss::FitNorm::L2 : loss::FitNorm::SquaredL2;
  c.ppcn.bn_before_relu = j.at("bn_before_relu").get<bool>();
  c.ppcn.bn_eps = j.at("bn_eps").get<double>();
  c.ppcn.bn_momentum = j.at("bn_momentum").get<double>();
  c.head.width1 = j.at("head_width1").get<int>();
  c.head.width2 = j.at("head_width2").get<int>();
  c.freeze_ppcn = j.at("freeze_ppcn").get<bool>();
  c.log_train_eval = j.at("log_train_eval").get<bool>();
  c.dataset = j.at("dataset").get<std::string>();
  return c;
}

template <typename T>
void sgd_step(std::span<T> params, std::span<const T> grads, std::span<T> velocity, double lr, double momentum) {
  if (params.size() != grads.size() || params.size() != velocity.size())
    throw StructuralError("sgd_step: parameter, gradient and velocity sizes differ");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i])) throw NumericalError("sgd_step: non-finite gradient at index " + std::to_string(i));
  const T m = static_cast<T>(momentum), a = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = m * velocity[i] + grads[i];
    params[i] -= a * velocity[i];
  }
}

template void sgd_step<float>(std::span<float>, std::span<const float>, std::span<float>, double, double);
template void sgd_step<double>(std::span<double>, std::span<const double>, std::span<double>, double, double);

void split_indices(std::size_t count, std::vector<std::size_t>& train, std::vector<std::size_t>& val) {
  if (count < 2) throw ConfigError("dataset needs at least 2 samples for a train/validation split");
  const std::size_t n_val = std::max<std::size_t>(1, count / 10);
  train.clear();
  val.clear();
  for (std::size_t i = 0; i < count; ++i) (i < count - n_val ? train : val).push_back(i);
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr char kCkptMagic[4] = {'P', 'C', 'K', 'P'};

nlohmann::json nullable(double v) { return std::isnan(v) ? nlohmann::json() : nlohmann::json(v); }
double from_nullable(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

nlohmann::json eval_json(const EvalResult& e) {
  nlohmann::json iou = nlohmann::json::array();
  for (double v : e.iou) iou.push_back(nullable(v));
  return {{"loss", nullable(e.loss)}, {"accuracy", nullable(e.accuracy)}, {"iou", iou}};
}

EvalResult eval_from_json(const nlohmann::json& j) {
  EvalResult e;
  e.loss = from_nullable(j.at("loss"));
  e.accuracy = from_nullable(j.at("accuracy"));
  for (const auto& v : j.at("iou")) e.iou.push_back(from_nullable(v));
  return e;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& r : ckpt.history)
    history.push_back({{"epoch", r.epoch},
                       {"train_loss", nullable(r.train_loss)},
                       {"val", eval_json(r.val)},
                       {"train_eval", r.train_eval ? eval_json(*r.train_eval) : nlohmann::json()}});
  nlohmann::json names = nlohmann::json::array();
  for (const auto& t : ckpt.tensors) names.push_back(t.name);
  const nlohmann::json header = {{"format", "ppcn-checkpoint"},
                                 {"format_version", ckpt.format_version},
                                 {"config", to_json(ckpt.config)},
                                 {"epoch", ckpt.epoch},
                                 {"rng_state", ckpt.rng_state},
                                 {"history", history},
                                 {"tensors", names}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kCkptMagic), std::end(kCkptMagic));
  io::put_u8(out, static_cast<std::uint8_t>(ckpt.format_version));
  io::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  io::put_u32(out, io::crc32({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}));
  for (const auto& t : ckpt.tensors) {
    if (t.name.size() > 0xFFFF) throw UsageError("tensor name too long: " + t.name);
    io::put_u16(out, static_cast<std::uint16_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    const auto rec = io::PtnsArray::from({static_cast<std::uint32_t>(t.values.size())}, t.values).encode();
    out.insert(out.end(), rec.begin(), rec.end());
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& origin) {
  if (bytes.size() < 4 || !std::equal(std::begin(kCkptMagic), std::end(kCkptMagic), bytes.begin()))
    throw FormatError(origin + ": not a checkpoint (bad magic)");
  std::size_t pos = 4;
  const int version = io::get_u8(bytes, pos, origin);
  if (version != Checkpoint::kFormatVersion)
    throw FormatError(origin + ": checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(Checkpoint::kFormatVersion) + ")");
  const std::uint32_t len = io::get_u32(bytes, pos, origin);
  if (bytes.size() - pos < len) throw FormatError(origin + ": truncated checkpoint header");
  const auto text = bytes.subspan(pos, len);
  pos += len;
  if (io::get_u32(bytes, pos, origin) != io::crc32(text)) throw FormatError(origin + ": checkpoint header CRC mismatch");

  Checkpoint c;
  std::vector<std::string> names;
  try {
    const auto h = nlohmann::json::parse(text.begin(), text.end());
    if (h.at("format").get<std::string>() != "ppcn-checkpoint") throw FormatError(origin + ": wrong format tag");
    c.format_version = h.at("format_version").get<int>();
    if (c.format_version != version) throw FormatError(origin + ": inconsistent checkpoint version");
    c.config = config_from_json(h.at("config"));
    c.epoch = h.at("epoch").get<int>();
    c.rng_state = h.at("rng_state").get<std::string>();
    for (const auto& r : h.at("history")) {
      MetricsRow row;
      row.epoch = r.at("epoch").get<int>();
      row.train_loss = from_nullable(r.at("train_loss"));
      row.val = eval_from_json(r.at("val"));
      if (!r.at("train_eval").is_null()) row.train_eval = eval_from_json(r.at("train_eval"));
      c.history.push_back(std::move(row));
    }
    names = h.at("tensors").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(origin + ": bad checkpoint header: " + e.what());
  } catch (const ParseError& e) {
    throw FormatError(origin + ": bad checkpoint config: " + e.what());
  }

  for (const auto& expected : names) {
    const std::size_t n = io::get_u16(bytes, pos, origin);
    if (bytes.size() - pos < n) throw FormatError(origin + ": truncated tensor name");
    std::string name(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    if (name != expected) throw FormatError(origin + ": tensor '" + name + "' out of order, expected '" + expected + "'");
    c.tensors.push_back({std::move(name), io::PtnsArray::decode(bytes, pos, origin).as_f32()});
  }
  if (pos != bytes.size()) throw FormatError(origin + ": trailing bytes after checkpoint");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  io::write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path), path.string());
}

// ---------------------------------------------------------------- Trainer

Trainer::Trainer(TrainConfig config, const scene::Dataset& dataset) : config_(std::move(config)) {
  validate(config_);
  prepare(dataset);
  if (uses_ppcn(config_)) {
    ppcn_.emplace(config_.effective_structure(), config_.ppcn);
    ppcn_->init_params(derive_seed(config_.seed, kPpcnInit));
  }
  if (config_.mode == TrainMode::Joint) {
    const int in = ppcn_ ? ppcn_->structure().output_channels() : inputs_.c();
    head_.emplace(in, num_classes_ + 1, config_.head);
    head_->init_params(derive_seed(config_.seed, kHeadInit));
  }
  shuffle_rng_.seed(derive_seed(config_.seed, kShuffle));
  collect_trainable();
}

void Trainer::collect_trainable() {
  trainable_.clear();
  if (ppcn_ && !(config_.mode == TrainMode::Joint && config_.freeze_ppcn))
    for (auto& p : ppcn_->parameters()) trainable_.push_back(p);
  if (head_)
    for (auto& p : head_->parameters()) trainable_.push_back(p);
  velocity_.clear();
  for (const auto& p : trainable_) velocity_.emplace_back(p.value.size(), 0.0f);
}

void Trainer::prepare(const scene::Dataset& dataset) {
  const auto& m = dataset.manifest;
  if (dataset.samples.size() != m.count) throw FormatError("dataset sample count does not match its manifest");
  split_indices(dataset.samples.size(), train_idx_, val_idx_);
  num_classes_ = m.num_classes;
  if (config_.mode == TrainMode::Joint && num_classes_ < 1)
    throw ConfigError("joint training needs a dataset with at least one target class");

  const auto strategy = input_strategy(config_);
  const int n = static_cast<int>(dataset.samples.size());
  inputs_ = Tensor<float>(n, polar::channel_count(strategy), m.height, m.width);
  if (config_.mode == TrainMode::FitParams) targets_ = Tensor<float>(n, 3, m.height, m.width);
  else labels_.reserve(static_cast<std::size_t>(n) * m.width * m.height);

  for (int i = 0; i < n; ++i) {
    const auto& s = dataset.samples[i];
    if (s.raw.width() != m.width || s.raw.height() != m.height)
      throw StructuralError("sample " + std::to_string(i) + " does not match dataset dimensions");
    const auto x = polar::assemble_strategy<float>(s.raw, strategy, config_.aop_convention);
    std::ranges::copy(x.sample(0), inputs_.sample(i).begin());
    if (config_.mode == TrainMode::FitParams) {
      const auto p = polar::analyze(s.raw, config_.aop_convention);
      const polar::Plane* planes[] = {&p.s0, &p.dolp, &p.aop};
      const polar::ParamKind kinds[] = {polar::ParamKind::S0, polar::ParamKind::DoLP, polar::ParamKind::AoP};
      for (int k = 0; k < 3; ++k) {
        auto dst = targets_.plane(i, k);
        for (std::size_t q = 0; q < dst.size(); ++q)
          dst[q] = static_cast<float>(polar::normalize_value(planes[k]->data[q], kinds[k]));
      }
    } else {
      labels_.insert(labels_.end(), s.truth.class_mask.begin(), s.truth.class_mask.end());
    }
  }
}

Trainer::Batch Trainer::gather(std::span<const std::size_t> indices) const {
  const int n = static_cast<int>(indices.size());
  Batch b{Tensor<float>(n, inputs_.c(), inputs_.h(), inputs_.w()), {}, {}};
  const std::size_t plane = inputs_.shape().plane();
  if (config_.mode == TrainMode::FitParams) b.targets = Tensor<float>(n, 3, inputs_.h(), inputs_.w());
  for (int k = 0; k < n; ++k) {
    const int i = static_cast<int>(indices[k]);
    std::ranges::copy(inputs_.sample(i), b.input.sample(k).begin());
    if (config_.mode == TrainMode::FitParams) {
      std::ranges::copy(targets_.sample(i), b.targets.sample(k).begin());
    } else {
      const auto first = labels_.begin() + static_cast<std::ptrdiff_t>(i * plane);
      b.labels.insert(b.labels.end(), first, first + static_cast<std::ptrdiff_t>(plane));
    }
  }
  return b;
}

Tensor<float> Trainer::forward(const Tensor<float>& input, nn::Mode mode) {
  Tensor<float> x = ppcn_ ? ppcn_->forward(input, mode) : input;
  if (head_) x = head_->forward(x);
  return x;
}

MetricsRow Trainer::run_epoch() {
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::size_t> order = train_idx_;
  std::shuffle(order.begin(), order.end(), shuffle_rng_);

  const bool backprop_ppcn = ppcn_ && !(config_.mode == TrainMode::Joint && config_.freeze_ppcn);
  double loss_sum = 0.0;
  std::size_t seen = 0;
  const std::size_t bs = static_cast<std::size_t>(config_.batch_size);
  for (std::size_t first = 0, batch_no = 0; first < order.size(); first += bs, ++batch_no) {
    const auto idx = std::span(order).subspan(first, std::min(bs, order.size() - first));
    const Batch batch = gather(idx);
    if (ppcn_) ppcn_->zero_grad();
    if (head_) head_->zero_grad();

    const Tensor<float> out = forward(batch.input, nn::Mode::Train);
    double loss;
    Tensor<float> grad;
    if (config_.mode == TrainMode::FitParams) {
      loss = loss::fitting_loss(out, batch.targets, config_.fit_norm);
      grad = loss::fitting_loss_backward(out, batch.targets, config_.fit_norm);
    } else {
      nn::SoftmaxCrossEntropy<float> ce;
      loss = ce.forward(out, batch.labels);
      grad = ce.backward();
    }
    if (!std::isfinite(loss))
      throw NumericalError("non-finite loss at epoch " + std::to_string(epoch_ + 1) + ", batch " +
                           std::to_string(batch_no));
    if (head_) grad = head_->backward(grad);
    if (backprop_ppcn) ppcn_->backward(grad);
    for (std::size_t k = 0; k < trainable_.size(); ++k) {
      try {
        sgd_step<float>(trainable_[k].value, trainable_[k].grad, velocity_[k], config_.learning_rate,
                        config_.momentum);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " of " + trainable_[k].name + " at epoch " +
                             std::to_string(epoch_ + 1) + ", batch " + std::to_string(batch_no));
      }
    }
    loss_sum += loss * double(idx.size());
    seen += idx.size();
  }

  MetricsRow row;
  row.train_loss = seen ? loss_sum / double(seen) : 0.0;
  row.val = evaluate(val_idx_);
  if (config_.log_train_eval) row.train_eval = evaluate(train_idx_);
  row.epoch = ++epoch_;
  row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  history_.push_back(row);
  return row;
}

const std::vector<MetricsRow>& Trainer::run(const std::function<void(const MetricsRow&)>& on_epoch) {
  while (!finished()) {
    const MetricsRow row = run_epoch();
    if (on_epoch) on_epoch(row);
  }
  return history_;
}

EvalResult Trainer::evaluate(Split split) {
  std::vector<std::size_t> all;
  switch (split) {
    case Split::Train: return evaluate(train_idx_);
    case Split::Val: return evaluate(val_idx_);
    case Split::All:
      all = train_idx_;
      all.insert(all.end(), val_idx_.begin(), val_idx_.end());
      return evaluate(all);
  }
  throw UsageError("unknown split");
}

EvalResult Trainer::evaluate(std::span<const std::size_t> indices) {
  EvalResult r;
  loss::SegmentationCounts counts(num_classes_ + 1);
  double loss_sum = 0.0;
  std::size_t weight = 0;
  const std::size_t bs = static_cast<std::size_t>(config_.batch_size);
  for (std::size_t first = 0; first < indices.size(); first += bs) {
    const auto idx = indices.subspan(first, std::min(bs, indices.size() - first));
    const Batch batch = gather(idx);
    const Tensor<float> out = forward(batch.input, nn::Mode::Infer);
    if (config_.mode == TrainMode::FitParams) {
      for (double l : loss::fitting_loss_per_sample(out, batch.targets, config_.fit_norm)) loss_sum += l;
      weight += idx.size();
    } else {
      nn::SoftmaxCrossEntropy<float> ce;
      const double l = ce.forward(out, batch.labels);
      loss_sum += l * double(batch.labels.size());
      weight += batch.labels.size();
      counts.add(loss::argmax_labels(out), batch.labels);
    }
  }
  r.loss = weight ? loss_sum / double(weight) : 0.0;
  if (config_.mode == TrainMode::Joint) {
    r.accuracy = counts.accuracy();
    for (int k = 1; k <= num_classes_; ++k) r.iou.push_back(counts.iou(k));
  }
  return r;
}

Tensor<float> Trainer::ppcn_output(std::size_t sample) {
  if (!ppcn_) throw UsageError("this run has no PPCN (baseline strategy)");
  if (sample >= static_cast<std::size_t>(inputs_.n()))
    throw UsageError("sample index " + std::to_string(sample) + " out of range");
  const std::size_t idx[] = {sample};
  return ppcn_->forward(gather(idx).input, nn::Mode::Infer);
}

Checkpoint Trainer::checkpoint() {
  Checkpoint c;
  c.config = config_;
  c.epoch = epoch_;
  std::ostringstream rng;
  rng << shuffle_rng_;
  c.rng_state = rng.str();
  c.history = history_;
  for (auto& r : c.history) r.seconds = 0.0;
  auto add = [&](const std::string& name, std::span<const float> v) {
    c.tensors.push_back({name, std::vector<float>(v.begin(), v.end())});
  };
  if (ppcn_) {
    for (const auto& p : ppcn_->parameters()) add(p.name, p.value);
    for (const auto& b : ppcn_->buffers()) add(b.name, b.value);
  }
  if (head_)
    for (const auto& p : head_->parameters()) add(p.name, p.value);
  for (std::size_t k = 0; k < trainable_.size(); ++k) add("velocity." + trainable_[k].name, velocity_[k]);
  return c;
}

Trainer Trainer::resume(const Checkpoint& ckpt, const scene::Dataset& dataset, int epochs) {
  if (ckpt.format_version != Checkpoint::kFormatVersion)
    throw FormatError("checkpoint format version " + std::to_string(ckpt.format_version) + " is not supported");
  TrainConfig config = ckpt.config;
  if (epochs > 0) config.epochs = epochs;
  Trainer t(config, dataset);

  std::vector<std::pair<std::string, std::span<float>>> slots;
  if (t.ppcn_) {
    for (auto& p : t.ppcn_->parameters()) slots.emplace_back(p.name, p.value);
    for (auto& b : t.ppcn_->buffers()) slots.emplace_back(b.name, b.value);
  }
  if (t.head_)
    for (auto& p : t.head_->parameters()) slots.emplace_back(p.name, p.value);
  for (std::size_t k = 0; k < t.trainable_.size(); ++k)
    slots.emplace_back("velocity." + t.trainable_[k].name, std::span<float>(t.velocity_[k]));

  if (slots.size() != ckpt.tensors.size())
    throw FormatError("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
                      std::to_string(slots.size()));
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const auto& e = ckpt.tensors[k];
    if (e.name != slots[k].first || e.values.size() != slots[k].second.size())
      throw FormatError("checkpoint tensor '" + e.name + "' does not match model slot '" + slots[k].first + "'");
    std::ranges::copy(e.values, slots[k].second.begin());
  }
  std::istringstream rng(ckpt.rng_state);
  rng >> t.shuffle_rng_;
  if (rng.fail()) throw FormatError("checkpoint RNG state is corrupt");
  t.epoch_ = ckpt.epoch;
  t.history_ = ckpt.history;
  return t;
}

// ---------------------------------------------------------------- runs

TrainResult train_fit_params(const TrainConfig& config, const scene::Dataset& dataset) {
  TrainConfig c = config;
  c.mode = TrainMode::FitParams;
  Trainer t(c, dataset);
  t.run();
  return {t.history(), t.checkpoint()};
}

TrainResult train_joint(const TrainConfig& config, const scene::Dataset& dataset) {
  TrainConfig c = config;
  c.mode = TrainMode::Joint;
  Trainer t(c, dataset);
  t.run();
  return {t.history(), t.checkpoint()};
}

EvalResult evaluate(const Checkpoint& ckpt, const scene::Dataset& dataset, Split split) {
  Trainer t = Trainer::resume(ckpt, dataset);
  return t.evaluate(split);
}

std::vector<SweepRow> sweep(const std::vector<SweepPoint>& grid, const scene::Dataset& dataset, int jobs) {
  std::vector<SweepRow> rows(grid.size());
  auto run_point = [&](std::size_t i) {
    Trainer t(grid[i].config, dataset);
    t.run();
    SweepRow& r = rows[i];
    r.label = grid[i].label;
    r.seed = grid[i].config.seed;
    r.parameters = (t.ppcn() ? t.ppcn()->parameter_count() : 0) + (t.head() ? t.head()->parameter_count() : 0);
    r.final_val = t.history().back().val;
  };
  if (jobs <= 1 || grid.size() <= 1) {
    for (std::size_t i = 0; i < grid.size(); ++i) run_point(i);
    return rows;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr failure;
  auto worker = [&] {
    parallel::set_thread_count(1);
    while (true) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next >= grid.size() || failure) return;
        i = next++;
      }
      try {
        run_point(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (int k = 0; k < std::min<int>(jobs, static_cast<int>(grid.size())); ++k) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return rows;
}

// ---------------------------------------------------------------- CSV

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void append_eval_row(std::string& out, int epoch, const char* split, double loss, const EvalResult* eval,
                     int num_classes, double seconds, bool record_time) {
  out += std::to_string(epoch) + "," + split + "," + num(loss) + ",";
  out += eval ? num(eval->accuracy) : "";
  for (int k = 0; k < num_classes; ++k) {
    out += ",";
    if (eval && k < static_cast<int>(eval->iou.size())) out += num(eval->iou[k]);
  }
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.3f", record_time ? seconds : 0.0);
  out += std::string(",") + buf + "\n";
}

}  // namespace

std::string metrics_csv(const std::vector<MetricsRow>& rows, int num_classes, bool record_time) {
  std::string out = "epoch,split,loss,accuracy";
  for (int k = 1; k <= num_classes; ++k) out += ",iou_class" + std::to_string(k);
  out += ",seconds\n";
  for (const auto& r : rows) {
    append_eval_row(out, r.epoch, "train", r.train_loss, nullptr, num_classes, r.seconds, record_time);
    append_eval_row(out, r.epoch, "val", r.val.loss, &r.val, num_classes, r.seconds, record_time);
    if (r.train_eval)
      append_eval_row(out, r.epoch, "train_eval", r.train_eval->loss, &*r.train_eval, num_classes, r.seconds,
                      record_time);
  }
  return out;
}

std::string sweep_csv(const std::vector<SweepRow>& rows, int num_classes) {
  std::string out = "label,seed,parameters,val_loss,accuracy";
  for (int k = 1; k <= num_classes; ++k) out += ",iou_class" + std::to_string(k);
  out += "\n";
  for (const auto& r : rows) {
    out += r.label + "," + std::to_string(r.seed) + "," + std::to_string(r.parameters) + "," + num(r.final_val.loss) +
           "," + num(r.final_val.accuracy);
    for (int k = 0; k < num_classes; ++k)
      out += "," + (k < static_cast<int>(r.final_val.iou.size()) ? num(r.final_val.iou[k]) : std::string());
    out += "\n";
  }
  return out;
}

}  // namespace ppcn::train
