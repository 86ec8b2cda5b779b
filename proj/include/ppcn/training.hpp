#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ppcn/loss.hpp"
#include "ppcn/polarimetry.hpp"
#include "ppcn/ppcn.hpp"
#include "ppcn/scenegen.hpp"
#include "ppcn/taskhead.hpp"

namespace ppcn::train {

enum class TrainMode { FitParams, Joint };

struct TrainConfig {
  nn::StructureSpec structure{{4, 8, 16, 8, 3}};
  int epochs = 1;
  int batch_size = 2;
  double learning_rate = 0.003;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::FitParams;
  /// Joint mode: feed this hand-picked strategy straight to the head instead
  /// of a PPCN.
  std::optional<polar::InputStrategy> baseline;
  /// Joint mode: number of PPCN output images x; replaces the structure's
  /// last size when > 0.
  int output_count = 0;
  polar::AopConvention aop_convention = polar::AopConvention::Swapped;
  loss::FitNorm fit_norm = loss::FitNorm::L2;
  nn::PpcnOptions ppcn;
  nn::HeadOptions head;
  /// Joint mode: keep PPCN weights at their initial values.
  bool freeze_ppcn = false;
  /// Also evaluate the training split in inference mode after every epoch.
  bool log_train_eval = false;
  std::string dataset;

  /// Structure actually instantiated (output_count applied).
  nn::StructureSpec effective_structure() const;
  bool operator==(const TrainConfig&) const = default;
};

void validate(const TrainConfig& config);
nlohmann::json to_json(const TrainConfig& config);
TrainConfig config_from_json(const nlohmann::json& j);
std::string to_string(TrainMode mode);

struct EvalResult {
  double loss = 0.0;
  /// Joint mode only; NaN otherwise.
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  /// IoU for classes 1..K (Joint mode only).
  std::vector<double> iou;
  /// NaN compares equal to NaN here.
  bool operator==(const EvalResult&) const;
};

struct MetricsRow {
  int epoch = 0;
  /// Sample-weighted mean of the minibatch losses seen during the epoch.
  double train_loss = 0.0;
  EvalResult val;
  std::optional<EvalResult> train_eval;
  double seconds = 0.0;
};

enum class Split { Train, Val, All };

/// v <- momentum * v + g; p <- p - lr * v. Throws NumericalError on a
/// non-finite gradient before touching anything.
template <typename T>
void sgd_step(std::span<T> params, std::span<const T> grads, std::span<T> velocity, double lr, double momentum);

/// Serialized training state.
struct Checkpoint {
  static constexpr int kFormatVersion = 1;
  int format_version = kFormatVersion;
  TrainConfig config;
  int epoch = 0;  // completed epochs
  std::string rng_state;
  std::vector<MetricsRow> history;  // seconds are not stored
  struct Entry {
    std::string name;
    std::vector<float> values;
    bool operator==(const Entry&) const = default;
  };
  std::vector<Entry> tensors;  // parameters, BN buffers, velocities
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& origin);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Owns the models, optimizer state and prepared data of one run.
class Trainer {
 public:
  Trainer(TrainConfig config, const scene::Dataset& dataset);
  /// Restores everything from `ckpt`; `epochs` (if > 0) replaces the target
  /// epoch count so a run can be extended.
  static Trainer resume(const Checkpoint& ckpt, const scene::Dataset& dataset, int epochs = 0);

  const TrainConfig& config() const { return config_; }
  int epoch() const { return epoch_; }
  bool finished() const { return epoch_ >= config_.epochs; }
  const std::vector<MetricsRow>& history() const { return history_; }
  int num_classes() const { return num_classes_; }
  std::size_t train_size() const { return train_idx_.size(); }
  std::size_t val_size() const { return val_idx_.size(); }

  MetricsRow run_epoch();
  /// Runs the remaining epochs; `on_epoch` sees each row after it is logged.
  const std::vector<MetricsRow>& run(const std::function<void(const MetricsRow&)>& on_epoch = {});

  /// Inference-mode evaluation; does not modify any state that affects training.
  EvalResult evaluate(Split split);
  EvalResult evaluate(std::span<const std::size_t> indices);

  /// Inference-mode PPCN output for one prepared sample (N=1).
  Tensor<float> ppcn_output(std::size_t sample);

  Checkpoint checkpoint();

  nn::PpcnModel<float>* ppcn() { return ppcn_ ? &*ppcn_ : nullptr; }
  nn::HeadModel<float>* head() { return head_ ? &*head_ : nullptr; }

 private:
  struct Batch {
    Tensor<float> input;
    Tensor<float> targets;
    std::vector<std::uint8_t> labels;
  };

  void prepare(const scene::Dataset& dataset);
  Batch gather(std::span<const std::size_t> indices) const;
  Tensor<float> forward(const Tensor<float>& input, nn::Mode mode);
  void collect_trainable();

  TrainConfig config_;
  int num_classes_ = 0;
  std::optional<nn::PpcnModel<float>> ppcn_;
  std::optional<nn::HeadModel<float>> head_;
  std::vector<nn::ParamView<float>> trainable_;
  std::vector<std::vector<float>> velocity_;

  Tensor<float> inputs_;    // all samples, N x C x H x W
  Tensor<float> targets_;   // FitParams: N x 3 x H x W
  std::vector<std::uint8_t> labels_;  // Joint: N*H*W
  std::vector<std::size_t> train_idx_, val_idx_;

  std::mt19937_64 shuffle_rng_;
  int epoch_ = 0;
  std::vector<MetricsRow> history_;
};

/// Sample-index split: the last max(1, count/10) samples are validation.
void split_indices(std::size_t count, std::vector<std::size_t>& train, std::vector<std::size_t>& val);

struct TrainResult {
  std::vector<MetricsRow> history;
  Checkpoint checkpoint;
};

TrainResult train_fit_params(const TrainConfig& config, const scene::Dataset& dataset);
TrainResult train_joint(const TrainConfig& config, const scene::Dataset& dataset);

EvalResult evaluate(const Checkpoint& ckpt, const scene::Dataset& dataset, Split split = Split::Val);

struct SweepPoint {
  std::string label;
  TrainConfig config;
};

struct SweepRow {
  std::string label;
  std::uint64_t seed = 0;
  std::size_t parameters = 0;
  EvalResult final_val;
};

/// Trains every grid point; `jobs` > 1 runs points concurrently, each
/// single-threaded, and results stay in grid order.
std::vector<SweepRow> sweep(const std::vector<SweepPoint>& grid, const scene::Dataset& dataset, int jobs = 1);

/// Header: epoch,split,loss,accuracy,iou_class1..K,seconds. Wall-clock time
/// is written only when `record_time` is set; otherwise the column is 0 so
/// reruns are byte-identical.
std::string metrics_csv(const std::vector<MetricsRow>& rows, int num_classes, bool record_time = false);
std::string sweep_csv(const std::vector<SweepRow>& rows, int num_classes);

}  // namespace ppcn::train
