#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "lpv/model.hpp"

using namespace lpv;
namespace fs = std::filesystem;

namespace {

LpvConfig tiny_config(std::size_t stages = 3) {
  LpvConfig cfg;
  cfg.n_stages = stages;
  cfg.glrm_layers = 1;
  cfg.t_max = 4;
  cfg.backbone.img_h = 16;
  cfg.backbone.img_w = 32;
  cfg.backbone.e = 8;
  cfg.backbone.heads = 2;
  cfg.backbone.n_mix_blocks = 1;
  cfg.schedule.batch_size = 4;
  cfg.schedule.total_epochs = 2;
  cfg.schedule.mask_on_epoch = 1;
  cfg.schedule.lr_decay_epoch = 1;
  return cfg;
}

std::vector<Sample> tiny_dataset(const LpvConfig& cfg, std::size_t n, std::uint64_t seed) {
  DatasetSpec spec;
  spec.vocab = {"rat", "tea", "ant", "net", "ten", "set", "dot", "cod"};
  spec.charset = Charset(cfg.charset);
  spec.t_max = cfg.t_max;
  spec.render.img_h = cfg.backbone.img_h;
  spec.render.img_w = cfg.backbone.img_w;
  return make_dataset(spec, n, Split::kTrain, seed);
}

std::vector<const Sample*> pointers(const std::vector<Sample>& samples) {
  std::vector<const Sample*> out;
  for (const auto& s : samples) out.push_back(&s);
  return out;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("lpv_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

StageOutput stage_with_logits(Tensor logits) {
  StageOutput s;
  s.pam.logits = std::move(logits);
  return s;
}

}  // namespace

TEST_CASE("cascade structure") {
  LpvModel one(tiny_config(1));
  CHECK(one.pam_count() == 1);
  CHECK(one.glrm_count() == 0);
  const auto data = tiny_dataset(one.config(), 2, 1);
  CHECK(one.forward(make_batch(pointers(data)), true).stages.size() == 1);

  LpvModel three(tiny_config(3));
  CHECK(three.pam_count() == 3);
  CHECK(three.glrm_count() == 2);
  const auto params = three.parameters();
  std::set<std::string> names;
  for (const auto& p : params) CHECK(names.insert(p.name).second);
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = i + 1; j < params.size(); ++j) REQUIRE_FALSE(params[i].tensor.same_storage(params[j].tensor));
  std::size_t pam_sets = 0, glrm_sets = 0;
  for (const auto& n : names) {
    pam_sets += n.rfind("pam.", 0) == 0 && n.find(".classifier.weight") != std::string::npos;
    glrm_sets += n.rfind("glrm.", 0) == 0 && n.find(".block.0.norm1.gamma") != std::string::npos;
  }
  CHECK(pam_sets == 3);
  CHECK(glrm_sets == 2);
}

TEST_CASE("desk model parameter count is stable") {
  LpvConfig desk;
  LpvModel a(desk), b(desk);
  CHECK(a.parameter_count() == 241322);
  CHECK(b.parameter_count() == a.parameter_count());
}

TEST_CASE("stage priors are the previous stage's character features") {
  LpvModel model(tiny_config(3));
  const auto data = tiny_dataset(model.config(), 3, 2);
  const auto trace = model.forward(make_batch(pointers(data)), true);
  for (std::size_t i = 1; i < 3; ++i) {
    const Tensor expected = model.pam(i).build_query(trace.stages[i - 1].pam.char_feats, 3);
    const Tensor& q = trace.stages[i].pam.query;
    for (std::size_t k = 0; k < q.numel(); ++k) REQUIRE(q.data()[k] == expected.data()[k]);
    REQUIRE(trace.stages[i].glrm.mask.defined());
  }
  CHECK_FALSE(trace.stages[0].glrm.features.defined());
}

TEST_CASE("only later stages see the image through their queries") {
  LpvModel model(tiny_config(3));
  const auto data = tiny_dataset(model.config(), 2, 3);
  REQUIRE(data[0].image != data[1].image);
  const auto ta = model.forward(make_batch({&data[0]}), true);
  const auto tb = model.forward(make_batch({&data[1]}), true);
  const Tensor& q0a = ta.stages[0].pam.query;
  const Tensor& q0b = tb.stages[0].pam.query;
  for (std::size_t k = 0; k < q0a.numel(); ++k) REQUIRE(q0a.data()[k] == q0b.data()[k]);
  for (std::size_t i = 1; i < 3; ++i) {
    double diff = 0;
    const Tensor& qa = ta.stages[i].pam.query;
    const Tensor& qb = tb.stages[i].pam.query;
    for (std::size_t k = 0; k < qa.numel(); ++k) diff = std::max(diff, std::abs(double(qa.data()[k] - qb.data()[k])));
    CHECK(diff > 0);
  }
}

TEST_CASE("loss examples") {
  const std::vector<int> labels{0, 3, 5, 1};
  StageTrace uniform;
  uniform.stages.push_back(stage_with_logits(Tensor::zeros({1, 4, 38})));
  CHECK(compute_loss(uniform, labels).item() == doctest::Approx(std::log(38.0)).epsilon(1e-12));
  CHECK(std::log(38.0) == doctest::Approx(3.63759).epsilon(1e-6));

  std::vector<Real> confident(4 * 38, 0);
  for (std::size_t j = 0; j < 4; ++j) confident[j * 38 + labels[j]] = 60;
  StageTrace right;
  right.stages.push_back(stage_with_logits(Tensor::from_data({1, 4, 38}, confident)));
  CHECK(compute_loss(right, labels).item() < 1e-20);

  Rng rng(1);
  StageTrace two;
  two.stages.push_back(stage_with_logits(lpv_test::random_tensor({1, 4, 38}, rng, -3, 3)));
  two.stages.push_back(stage_with_logits(lpv_test::random_tensor({1, 4, 38}, rng, -3, 3)));
  const double l0 = stage_loss(two.stages[0], labels).item();
  const double l1 = stage_loss(two.stages[1], labels).item();
  CHECK(compute_loss(two, labels).item() == doctest::Approx((l0 + l1) / 2).epsilon(1e-12));

  const std::vector<int> bad{0, 38, 0, 0};
  CHECK_THROWS_AS(compute_loss(uniform, bad), ContractError);
}

TEST_CASE("per-sample loss is covariant under batch shuffling") {
  LpvModel model(tiny_config(2));
  const auto data = tiny_dataset(model.config(), 5, 4);
  auto batch = pointers(data);
  const auto base = per_sample_losses(model.forward(make_batch(batch), true), batch_labels(batch));
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  std::vector<const Sample*> shuffled;
  for (auto i : perm) shuffled.push_back(batch[i]);
  const auto moved = per_sample_losses(model.forward(make_batch(shuffled), true), batch_labels(shuffled));
  for (std::size_t k = 0; k < perm.size(); ++k) CHECK(moved[k] == doctest::Approx(base[perm[k]]).epsilon(1e-12));
}

TEST_CASE("greedy decoding") {
  const Charset cs("hi");  // h=0, i=1, eos=2, pad=3
  auto one_hot = [&](std::vector<int> classes) {
    std::vector<Real> logits(classes.size() * 4, 0);
    for (std::size_t j = 0; j < classes.size(); ++j) logits[j * 4 + classes[j]] = 1;
    return logits;
  };
  CHECK(decode_prediction(one_hot({0, 1, 2, 3, 3}), 5, cs) == "hi");
  CHECK(decode_prediction(one_hot({2, 0, 1, 3, 3}), 5, cs) == "");
  CHECK(decode_prediction(one_hot({0, 3, 1, 2, 0}), 5, cs) == "hi");

  std::vector<Real> tie(10, 0);
  tie[3] = 5;
  tie[7] = 5;
  CHECK(argmax_classes(tie, 1, 10)[0] == 3);
}

TEST_CASE("adam examples") {
  auto w = Tensor::from_data({1}, {0}, true);
  Adam adam({w}, OptimizerConfig{});
  w.grad_buffer()[0] = 1;
  adam.step(0.1);
  CHECK(w.item() == doctest::Approx(-0.1 / (1 + 1e-8)).epsilon(1e-15));
  CHECK(w.item() == doctest::Approx(-0.09999999).epsilon(1e-8));

  auto z = Tensor::from_data({3}, {1, -2, 3}, true);
  Adam still({z}, OptimizerConfig{});
  z.grad_buffer();
  for (int i = 0; i < 5; ++i) still.step(0.1);
  CHECK(z.data()[0] == 1);
  CHECK(z.data()[1] == -2);
  CHECK(z.data()[2] == 3);
}

TEST_CASE("schedule") {
  LpvConfig cfg;
  CHECK_FALSE(mask_enabled_at(cfg.schedule, MaskMode::kSchedule, 7));
  CHECK(mask_enabled_at(cfg.schedule, MaskMode::kSchedule, 8));
  CHECK(mask_enabled_at(cfg.schedule, MaskMode::kOn, 0));
  CHECK_FALSE(mask_enabled_at(cfg.schedule, MaskMode::kOff, 15));
  CHECK(learning_rate_at(cfg, 9) == 3e-3);
  CHECK(learning_rate_at(cfg, 10) == 3e-4);
  CHECK(learning_rate_at_step(cfg, 0, 0) == doctest::Approx(3e-3 / 300));
  CHECK(learning_rate_at_step(cfg, 0, 149) == doctest::Approx(1.5e-3));
  CHECK(learning_rate_at_step(cfg, 1, 299) == 3e-3);
  CHECK(learning_rate_at_step(cfg, 12, 5000) == 3e-4);
  cfg.schedule.warmup_steps = 0;
  CHECK(learning_rate_at_step(cfg, 0, 0) == 3e-3);
  cfg.schedule.mask_on_epoch = cfg.schedule.total_epochs;
  for (std::size_t e = 0; e < cfg.schedule.total_epochs; ++e)
    CHECK_FALSE(mask_enabled_at(cfg.schedule, MaskMode::kSchedule, e));
  CHECK(parse_mask_mode("off") == MaskMode::kOff);
  CHECK_THROWS_AS(parse_mask_mode("sometimes"), ConfigError);

  LpvConfig bad;
  bad.schedule.mask_on_epoch = 17;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {};
  bad.n_stages = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("training is deterministic") {
  const LpvConfig cfg = tiny_config(2);
  const auto data = tiny_dataset(cfg, 20, 5);
  const fs::path dir = scratch_dir("determinism");
  std::vector<std::vector<Real>> finals;
  for (int run = 0; run < 2; ++run) {
    LpvModel model(cfg);
    TrainOptions opts;
    opts.metrics_csv = dir / ("metrics" + std::to_string(run) + ".csv");
    const auto history = train(model, data, opts);
    REQUIRE(history.size() == 2);
    CHECK_FALSE(history[0].mask_enabled);
    CHECK(history[1].mask_enabled);
    std::vector<Real> flat;
    for (const auto& p : model.parameters()) flat.insert(flat.end(), p.tensor.data().begin(), p.tensor.data().end());
    finals.push_back(std::move(flat));
  }
  CHECK(finals[0] == finals[1]);
  const std::string csv = slurp(dir / "metrics0.csv");
  CHECK(csv == slurp(dir / "metrics1.csv"));
  CHECK(csv.rfind("epoch,stage,loss,seq_acc,char_acc\n", 0) == 0);
  std::size_t lines = 0;
  for (char c : csv) lines += c == '\n';
  CHECK(lines == 1 + 2 * 2);
  fs::remove_all(dir);
}

TEST_CASE("evaluation does not depend on the thread count") {
  LpvModel model(tiny_config(2));
  const auto data = tiny_dataset(model.config(), 23, 6);
  const auto one = evaluate(model, data, true, 1, 4);
  const auto three = evaluate(model, data, true, 3, 4);
  REQUIRE(one.stages.size() == 2);
  CHECK(one.samples == 23);
  for (std::size_t s = 0; s < 2; ++s) {
    CHECK(one.stages[s].loss == three.stages[s].loss);
    CHECK(one.stages[s].seq_acc == three.stages[s].seq_acc);
    CHECK(one.stages[s].char_acc == three.stages[s].char_acc);
    CHECK(one.predictions[s] == three.predictions[s]);
  }
}

TEST_CASE("checkpoint round trip") {
  const LpvConfig cfg = tiny_config(2);
  const fs::path dir = scratch_dir("checkpoint");
  LpvModel model(cfg);
  const auto data = tiny_dataset(cfg, 2, 7);
  const Tensor batch = make_batch(pointers(data));
  save_checkpoint(model, dir / "a.lpv");

  LpvConfig other_seed = cfg;
  other_seed.seed = 99;
  LpvModel loaded(other_seed);
  load_checkpoint(loaded, dir / "a.lpv");
  // Checkpoints store 32-bit floats, so compare against the reloaded original.
  load_checkpoint(model, dir / "a.lpv");
  save_checkpoint(loaded, dir / "b.lpv");
  CHECK(slurp(dir / "a.lpv") == slurp(dir / "b.lpv"));
  CHECK(slurp(dir / "a.lpv").rfind("LPV1", 0) == 0);

  const auto before = model.forward(batch, true);
  const auto after = loaded.forward(batch, true);
  for (std::size_t s = 0; s < 2; ++s) {
    const auto& x = before.stages[s].pam.logits;
    const auto& y = after.stages[s].pam.logits;
    for (std::size_t k = 0; k < x.numel(); ++k) REQUIRE(x.data()[k] == y.data()[k]);
  }
}

TEST_CASE("checkpoint errors") {
  const LpvConfig cfg = tiny_config(2);
  const fs::path dir = scratch_dir("checkpoint_errors");
  LpvModel model(cfg);
  save_checkpoint(model, dir / "good.lpv");
  const std::string good = slurp(dir / "good.lpv");

  LpvConfig wide = cfg;
  wide.backbone.e = 12;
  wide.backbone.heads = 2;
  LpvModel wrong(wide);
  try {
    load_checkpoint(wrong, dir / "good.lpv");
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("backbone.conv1") != std::string::npos);
  }

  auto write = [&](const std::string& name, const std::string& bytes) {
    std::ofstream(dir / name, std::ios::binary) << bytes;
    return dir / name;
  };
  CHECK_THROWS_AS(load_checkpoint(model, write("magic.lpv", "LPV2" + good.substr(4))), FormatError);
  CHECK_THROWS_AS(load_checkpoint(model, write("short.lpv", good.substr(0, good.size() - 3))), FormatError);
  CHECK_THROWS_AS(load_checkpoint(model, write("long.lpv", good + "x")), FormatError);
  CHECK_THROWS_AS(load_checkpoint(model, dir / "missing.lpv"), IoError);

  LpvModel fewer(tiny_config(1));
  save_checkpoint(fewer, dir / "one_stage.lpv");
  CHECK_THROWS_AS(load_checkpoint(model, dir / "one_stage.lpv"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(fewer, dir / "good.lpv"), FormatError);
  fs::remove_all(dir);
}
