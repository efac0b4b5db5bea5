#include "lpv/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <thread>

namespace lpv::inline LPV_NS {

// --- config ---------------------------------------------------------------------

void LpvConfig::validate() const {
  if (n_stages < 1) throw ConfigError("n_stages must be at least 1");
  if (n_stages > 1 && glrm_layers < 1) throw ConfigError("glrm_layers must be at least 1");
  if (!(threshold > 0 && threshold < 1)) throw ConfigError("mask threshold must lie in (0, 1)");
  if (t_max < 2) throw ConfigError("t_max must be at least 2 (one symbol plus [EOS])");
  Charset check(charset);
  backbone.validate();
  if (schedule.mask_on_epoch > schedule.total_epochs) throw ConfigError("mask_on_epoch exceeds total_epochs");
  if (schedule.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(optimizer.lr > 0) || !(schedule.decayed_lr > 0)) throw ConfigError("learning rates must be positive");
}

// --- model ----------------------------------------------------------------------

LpvModel::LpvModel(const LpvConfig& config) : config_(config) {
  config_.validate();
  charset_ = Charset(config_.charset);
  Rng rng(config_.seed);
  backbone_ = Backbone(config_.backbone, rng);
  const std::size_t e = config_.backbone.e;
  for (std::size_t i = 0; i < config_.n_stages; ++i) {
    pams_.emplace_back(e, config_.t_max, config_.classes(), rng);
    if (i > 0) {
      glrms_.emplace_back(e, config_.backbone.heads, config_.glrm_layers, rng, static_cast<Real>(config_.threshold));
    }
  }
}

StageTrace LpvModel::forward(const Tensor& images, bool mask_enabled, const std::vector<Tensor>* frozen_masks) const {
  if (frozen_masks && frozen_masks->size() != glrms_.size()) {
    throw ShapeError("expected " + std::to_string(glrms_.size()) + " frozen masks, got " +
                     std::to_string(frozen_masks->size()));
  }
  const std::size_t gh = config_.backbone.grid_h(), gw = config_.backbone.grid_w();
  StageTrace trace;
  for (std::size_t i = 0; i < pams_.size(); ++i) {
    StageOutput stage;
    if (i == 0) {
      stage.features = backbone_.forward(images);
    } else {
      const StageOutput& prev = trace.stages.back();
      std::optional<Tensor> frozen;
      if (frozen_masks) frozen = (*frozen_masks)[i - 1];
      stage.glrm = glrms_[i - 1].forward(prev.features, prev.pam.attn, mask_enabled, frozen);
      stage.features = stage.glrm.features;
    }
    std::optional<Tensor> prior;
    if (i > 0) prior = trace.stages.back().pam.char_feats;
    stage.pam = pams_[i].forward(stage.features, gh, gw, prior);
    trace.stages.push_back(std::move(stage));
  }
  return trace;
}

ParamList LpvModel::parameters() const {
  ParamList out;
  backbone_.collect("backbone", out);
  for (std::size_t i = 0; i < pams_.size(); ++i) pams_[i].collect("pam." + std::to_string(i), out);
  for (std::size_t i = 0; i < glrms_.size(); ++i) glrms_[i].collect("glrm." + std::to_string(i), out);
  return out;
}

std::size_t LpvModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

// --- batches and loss -------------------------------------------------------------

Tensor make_batch(const std::vector<const Sample*>& samples) {
  if (samples.empty()) throw ContractError("make_batch: empty batch");
  const std::size_t h = samples.front()->h, w = samples.front()->w;
  std::vector<Real> data;
  data.reserve(samples.size() * h * w);
  for (const Sample* s : samples) {
    if (s->h != h || s->w != w) throw ShapeError("make_batch: samples have different image sizes");
    data.insert(data.end(), s->image.begin(), s->image.end());
  }
  return Tensor::from_data({samples.size(), h, w, 1}, std::move(data));
}

std::vector<int> batch_labels(const std::vector<const Sample*>& samples) {
  std::vector<int> out;
  for (const Sample* s : samples) out.insert(out.end(), s->label.begin(), s->label.end());
  return out;
}

Tensor stage_loss(const StageOutput& stage, std::span<const int> labels) {
  const Tensor& logits = stage.pam.logits;
  const std::size_t rows = logits.dim(0) * logits.dim(1);
  if (labels.size() != rows) {
    throw ShapeError("loss: " + std::to_string(labels.size()) + " labels for logits " + shape_str(logits.shape()));
  }
  return mean(cross_entropy_rows(reshape(logits, {rows, logits.dim(2)}), labels));
}

Tensor compute_loss(const StageTrace& trace, std::span<const int> labels) {
  if (trace.stages.empty()) throw ContractError("compute_loss: empty trace");
  Tensor total = stage_loss(trace.stages.front(), labels);
  for (std::size_t i = 1; i < trace.stages.size(); ++i) total = add(total, stage_loss(trace.stages[i], labels));
  return scale(total, Real(1) / static_cast<Real>(trace.stages.size()));
}

std::vector<Real> per_sample_losses(const StageTrace& trace, std::span<const int> labels) {
  NoGradGuard no_grad;
  const Tensor& first = trace.stages.front().pam.logits;
  const std::size_t batch = first.dim(0), t = first.dim(1), c = first.dim(2);
  std::vector<Real> out(batch, 0);
  for (const auto& stage : trace.stages) {
    const Tensor ce = cross_entropy_rows(reshape(stage.pam.logits, {batch * t, c}), labels);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < t; ++j) out[b] += ce.data()[b * t + j];
  }
  for (auto& v : out) v /= static_cast<Real>(trace.stages.size() * t);
  return out;
}

std::vector<int> argmax_classes(std::span<const Real> logits, std::size_t t_max, std::size_t classes) {
  if (logits.size() != t_max * classes) throw ShapeError("argmax_classes: logits size does not match T x C");
  std::vector<int> out(t_max);
  for (std::size_t j = 0; j < t_max; ++j) {
    const Real* row = logits.data() + j * classes;
    out[j] = static_cast<int>(std::max_element(row, row + classes) - row);
  }
  return out;
}

std::string decode_prediction(std::span<const Real> logits, std::size_t t_max, const Charset& charset) {
  return charset.decode(argmax_classes(logits, t_max, charset.classes()));
}

// --- Adam -----------------------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, const OptimizerConfig& config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), Real(0));
    v_.emplace_back(p.numel(), Real(0));
  }
}

void Adam::step(double lr) {
  ++step_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  const auto b1 = static_cast<Real>(config_.beta1), b2 = static_cast<Real>(config_.beta2);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mhat = static_cast<double>(m[i]) / c1;
      const double vhat = static_cast<double>(v[i]) / c2;
      w[i] = static_cast<Real>(static_cast<double>(w[i]) - lr * mhat / (std::sqrt(vhat) + config_.eps));
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

// --- training ---------------------------------------------------------------------

MaskMode parse_mask_mode(const std::string& text) {
  if (text == "schedule") return MaskMode::kSchedule;
  if (text == "on") return MaskMode::kOn;
  if (text == "off") return MaskMode::kOff;
  throw ConfigError("mask mode must be one of on, off, schedule; got \"" + text + "\"");
}

std::string to_string(MaskMode mode) {
  switch (mode) {
    case MaskMode::kSchedule: return "schedule";
    case MaskMode::kOn: return "on";
    case MaskMode::kOff: return "off";
  }
  return "schedule";
}

bool mask_enabled_at(const ScheduleConfig& schedule, MaskMode mode, std::size_t epoch) {
  switch (mode) {
    case MaskMode::kOn: return true;
    case MaskMode::kOff: return false;
    case MaskMode::kSchedule: return epoch >= schedule.mask_on_epoch;
  }
  return false;
}

double learning_rate_at(const LpvConfig& config, std::size_t epoch) {
  return epoch >= config.schedule.lr_decay_epoch ? config.schedule.decayed_lr : config.optimizer.lr;
}

double learning_rate_at_step(const LpvConfig& config, std::size_t epoch, std::size_t step) {
  const double base = learning_rate_at(config, epoch);
  const std::size_t warmup = config.schedule.warmup_steps;
  if (step >= warmup) return base;
  return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
}

namespace {

struct StageTally {
  double loss_sum = 0;
  std::size_t loss_rows = 0;
  std::size_t seq_ok = 0;
  std::size_t seqs = 0;
  std::size_t chars_ok = 0;
  std::size_t chars = 0;

  void merge(const StageTally& o) {
    loss_sum += o.loss_sum;
    loss_rows += o.loss_rows;
    seq_ok += o.seq_ok;
    seqs += o.seqs;
    chars_ok += o.chars_ok;
    chars += o.chars;
  }
  StageMetrics metrics() const {
    StageMetrics m;
    m.loss = loss_rows ? loss_sum / static_cast<double>(loss_rows) : 0.0;
    m.seq_acc = seqs ? static_cast<double>(seq_ok) / static_cast<double>(seqs) : 0.0;
    m.char_acc = chars ? static_cast<double>(chars_ok) / static_cast<double>(chars) : 0.0;
    return m;
  }
};

// Adds one batch's loss and accuracy to the tallies; returns decoded strings
// per stage when requested.
void tally_batch(const StageTrace& trace, const std::vector<const Sample*>& batch, const Charset& charset,
                 std::vector<StageTally>& tallies, std::vector<std::vector<std::string>>* predictions) {
  NoGradGuard no_grad;
  const std::vector<int> labels = batch_labels(batch);
  for (std::size_t i = 0; i < trace.stages.size(); ++i) {
    const Tensor& logits = trace.stages[i].pam.logits;
    const std::size_t t = logits.dim(1), c = logits.dim(2);
    const Tensor ce = cross_entropy_rows(reshape(logits, {batch.size() * t, c}), labels);
    StageTally& tally = tallies[i];
    for (Real v : ce.data()) tally.loss_sum += v;
    tally.loss_rows += ce.numel();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      std::span<const Real> row(logits.data().data() + b * t * c, t * c);
      const std::vector<int> classes = argmax_classes(row, t, c);
      const std::string text = charset.decode(classes);
      const Sample& s = *batch[b];
      tally.seqs += 1;
      if (text == s.text) tally.seq_ok += 1;
      for (std::size_t j = 0; j < s.text.size(); ++j) {
        tally.chars += 1;
        if (classes[j] == s.label[j]) tally.chars_ok += 1;
      }
      if (predictions) (*predictions)[i].push_back(text);
    }
  }
}

}  // namespace

std::vector<EpochMetrics> train(LpvModel& model, const std::vector<Sample>& dataset, const TrainOptions& options) {
  if (dataset.empty()) throw ContractError("train: dataset is empty");
  const LpvConfig& config = model.config();
  const ParamList params = model.parameters();
  Adam adam(tensors_of(params), config.optimizer);
  std::vector<std::size_t> order(dataset.size());
  std::vector<EpochMetrics> history;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.schedule.total_epochs; ++epoch) {
    const bool mask_on = mask_enabled_at(config.schedule, options.mask_mode, epoch);
    const double lr = learning_rate_at(config, epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(mix_seed(config.seed, 1000 + epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    std::vector<StageTally> tallies(config.n_stages);
    for (std::size_t start = 0; start < order.size(); start += config.schedule.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.schedule.batch_size);
      std::vector<const Sample*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&dataset[order[i]]);
      const std::vector<int> labels = batch_labels(batch);

      StageTrace trace = model.forward(make_batch(batch), mask_on);
      const Tensor loss = compute_loss(trace, labels);
      if (!std::isfinite(static_cast<double>(loss.item()))) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                             std::to_string(start));
      }
      adam.zero_grad();
      loss.backward();
      adam.step(learning_rate_at_step(config, epoch, step++));
      tally_batch(trace, batch, model.charset(), tallies, nullptr);
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.mask_enabled = mask_on;
    em.lr = lr;
    for (const auto& t : tallies) em.stages.push_back(t.metrics());
    history.push_back(em);
    if (options.on_epoch) options.on_epoch(em);
    if (options.metrics_csv) write_metrics_csv(*options.metrics_csv, history);
  }
  if (options.checkpoint) save_checkpoint(model, *options.checkpoint);
  return history;
}

EvalResult evaluate(const LpvModel& model, const std::vector<Sample>& samples, bool mask_enabled, std::size_t threads,
                    std::size_t batch_size) {
  const std::size_t n_stages = model.config().n_stages;
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  if (batch_size == 0) batch_size = 64;
  // Every batch keeps its own tally and they are merged in batch order, so
  // results do not depend on the thread count.
  const std::size_t n_batches = (samples.size() + batch_size - 1) / batch_size;
  threads = std::max<std::size_t>(1, std::min(threads, n_batches));
  struct BatchResult {
    std::vector<StageTally> tallies;
    std::vector<std::vector<std::string>> predictions;
  };
  std::vector<BatchResult> batches(n_batches);
  auto work = [&](std::size_t shard_id) {
    NoGradGuard no_grad;
    for (std::size_t b = shard_id * n_batches / threads; b < (shard_id + 1) * n_batches / threads; ++b) {
      BatchResult& out = batches[b];
      out.tallies.assign(n_stages, {});
      out.predictions.assign(n_stages, {});
      std::vector<const Sample*> batch;
      for (std::size_t i = b * batch_size; i < std::min(samples.size(), (b + 1) * batch_size); ++i) batch.push_back(&samples[i]);
      const StageTrace trace = model.forward(make_batch(batch), mask_enabled);
      tally_batch(trace, batch, model.charset(), out.tallies, &out.predictions);
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t s = 0; s < threads; ++s) pool.emplace_back(work, s);
    for (auto& th : pool) th.join();
  }
  EvalResult result;
  result.samples = samples.size();
  std::vector<StageTally> total(n_stages);
  result.predictions.assign(n_stages, {});
  for (const auto& batch : batches) {
    for (std::size_t i = 0; i < n_stages; ++i) {
      total[i].merge(batch.tallies[i]);
      result.predictions[i].insert(result.predictions[i].end(), batch.predictions[i].begin(), batch.predictions[i].end());
    }
  }
  for (const auto& t : total) result.stages.push_back(t.metrics());
  return result;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& epochs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "epoch,stage,loss,seq_acc,char_acc\n";
  char line[160];
  for (const auto& em : epochs) {
    for (std::size_t i = 0; i < em.stages.size(); ++i) {
      const auto& s = em.stages[i];
      std::snprintf(line, sizeof(line), "%zu,%zu,%.6f,%.6f,%.6f\n", em.epoch, i, s.loss, s.seq_acc, s.char_acc);
      out << line;
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

// --- checkpoint -------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'L', 'P', 'V', '1'};

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

class Reader {
 public:
  Reader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint " + path_ + " is truncated");
  }
  std::string bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const LpvModel& model, const std::filesystem::path& path) {
  const ParamList params = model.parameters();
  std::string buf(kMagic, 4);
  put_u32(buf, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put_u32(buf, static_cast<std::uint32_t>(p.name.size()));
    buf += p.name;
    put_u32(buf, static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto d : p.tensor.shape()) put_u32(buf, static_cast<std::uint32_t>(d));
    for (Real v : p.tensor.data()) put_u32(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

void load_checkpoint(LpvModel& model, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path.string());
  if (r.str(4) != std::string(kMagic, 4)) throw FormatError("checkpoint " + path.string() + " has a bad magic header");

  struct Stored {
    Shape shape;
    std::vector<Real> data;
  };
  std::map<std::string, Stored> stored;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32());
    Stored s;
    const std::uint32_t rank = r.u32();
    for (std::uint32_t d = 0; d < rank; ++d) s.shape.push_back(r.u32());
    const std::size_t n = shape_numel(s.shape);
    s.data.resize(n);
    for (std::size_t k = 0; k < n; ++k) s.data[k] = static_cast<Real>(std::bit_cast<float>(r.u32()));
    if (!stored.emplace(name, std::move(s)).second) throw FormatError("checkpoint repeats parameter " + name);
  }
  if (!r.done()) throw FormatError("checkpoint " + path.string() + " has trailing bytes");

  const ParamList params = model.parameters();
  std::map<std::string, const NamedParam*> by_name;
  for (const auto& p : params) by_name[p.name] = &p;
  for (const auto& [name, s] : stored) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint has unknown parameter " + name);
    if (it->second->tensor.shape() != s.shape) {
      throw ShapeError("parameter " + name + " has shape " + shape_str(s.shape) + " in the checkpoint but " +
                       shape_str(it->second->tensor.shape()) + " in the model");
    }
  }
  for (const auto& p : params) {
    if (!stored.count(p.name)) throw FormatError("checkpoint lacks parameter " + p.name);
  }
  for (const auto& p : params) {
    Tensor t = p.tensor;
    const auto& src = stored.at(p.name).data;
    std::copy(src.begin(), src.end(), t.data().begin());
  }
}

}  // namespace lpv::inline LPV_NS
