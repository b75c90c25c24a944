// Desk-scale acceptance run. Prints one PASS/FAIL/SKIP line per criterion and
// exits non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ckd/checkpoint.hpp"
#include "ckd/cli.hpp"
#include "ckd/ensemble.hpp"
#include "ckd/error.hpp"
#include "ckd/hashing.hpp"
#include "ckd/lime.hpp"
#include "ckd/metrics.hpp"
#include "ckd/run_config.hpp"
#include "ckd/trainer.hpp"
#include "oracles.hpp"

using namespace ckd;
namespace fs = std::filesystem;

namespace {

// Collects failures for one criterion; the first few are echoed.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    if (failures_ < 5) details_.push_back(what);
    ++failures_;
  }
  void near(double got, double want, double tol, const std::string& what) {
    std::ostringstream os;
    os << what << ": got " << got << " want " << want;
    expect(std::abs(got - want) <= tol, os.str());
  }
  std::size_t failures() const { return failures_; }
  const std::vector<std::string>& details() const { return details_; }
  std::string note;

 private:
  std::size_t failures_ = 0;
  std::vector<std::string> details_;
};

using Criterion = std::function<void(Check&)>;

Tensor random_images(std::size_t n, std::size_t side, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({n, side, side, 3});
  for (auto& v : t.values()) v = rng.uniform();
  return t;
}

bool on_simplex(const Tensor& p) {
  for (std::size_t i = 0; i < p.dim(0); ++i) {
    double s = 0;
    for (std::size_t c = 0; c < p.dim(1); ++c) {
      if (p.at(i, c) < 0.0 || p.at(i, c) > 1.0) return false;
      s += p.at(i, c);
    }
    if (std::abs(s - 1.0) > 1e-6) return false;
  }
  return true;
}

// ------------------------------------------------------------------ 1

void metric_oracles(Check& chk) {
  Rng rng(1);
  for (int inst = 0; inst < 1000; ++inst) {
    const std::size_t k = 2 + rng.below(5);
    const std::size_t n = 2 + rng.below(199);
    std::vector<std::size_t> t(n), p(n);
    std::vector<std::vector<double>> scores(k, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = rng.below(k);
      p[i] = rng.below(k) == 0 ? t[i] : rng.below(k);
      for (std::size_t c = 0; c < k; ++c) scores[c][i] = std::round(rng.uniform() * 25.0) / 25.0;
    }
    const auto cm = confusion_matrix(t, p, k);
    const auto ref = oracle::confusion(t, p, k);
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < k; ++b) chk.expect(cm.at(a, b) == ref[a][b], "confusion cell");
    }
    const auto prf = per_class_metrics(cm);
    for (std::size_t c = 0; c < k; ++c) {
      const auto o = oracle::class_prf(t, p, c);
      chk.near(prf.classes[c].precision, o.precision, 1e-9, "precision");
      chk.near(prf.classes[c].recall, o.recall, 1e-9, "recall");
      chk.near(prf.classes[c].f1, o.f1, 1e-9, "f1");

      std::vector<int> bin(n);
      bool pos = false, neg = false;
      for (std::size_t i = 0; i < n; ++i) {
        bin[i] = t[i] == c ? 1 : 0;
        (bin[i] ? pos : neg) = true;
      }
      if (!pos || !neg) {
        bool threw = false;
        try {
          roc_auc(bin, scores[c]);
        } catch (const Error& e) {
          threw = e.kind() == ErrorKind::SingleClass;
        }
        chk.expect(threw, "single-class AUC must raise");
        continue;
      }
      chk.near(roc_auc(bin, scores[c]).auc, oracle::pairwise_auc(bin, scores[c]), 1e-9, "auc");
      const auto pr = pr_curve(bin, scores[c]);
      const auto pr_ref = oracle::pr_points(bin, scores[c]);
      chk.expect(pr.size() == pr_ref.size(), "pr length");
      for (std::size_t j = 0; j < std::min(pr.size(), pr_ref.size()); ++j) {
        chk.near(pr[j].x, pr_ref[j].first, 1e-9, "pr recall");
        chk.near(pr[j].y, pr_ref[j].second, 1e-9, "pr precision");
      }
    }
  }
  chk.note = "1000 instances";
}

// ------------------------------------------------------------------ 2

struct Row {
  const char* cls;
  double p, r, f1, auc;
};

struct ModelTable {
  const char* name;
  std::vector<Row> rows;
  double headline[4];  // percent; NaN when not reported
};

void table_arithmetic(Check& chk) {
  const double none = std::nan("");
  const std::vector<ModelTable> tables = {
      {"MobileNet-V2",
       {{"Tumor", .87, .98, .92, .96}, {"Cyst", .96, .89, .92, .93}, {"Normal", .79, .80, .80, .89},
        {"Stone", .87, .83, .85, .90}},
       {87.25, 87.5, 87.25, 92.0}},
      {"EfficientNet-V2",
       {{"Tumor", .94, .89, .91, .93}, {"Cyst", .90, .95, .93, .94}, {"Normal", .82, .72, .87, .85},
        {"Stone", .81, .86, .83, .91}},
       {86.75, 85.5, none, 90.75}},
      {"InceptionNet-V2",
       {{"Tumor", .90, .91, .90, .93}, {"Cyst", .86, .91, .89, .91}, {"Normal", .77, .54, .63, .76},
        {"Stone", .80, .83, .81, .89}},
       {83.25, 79.75, 80.75, 87.25}},
      {"ViT",
       {{"Tumor", .90, .98, .94, .97}, {"Cyst", .95, .95, .95, .96}, {"Normal", .87, .82, .84, .90},
        {"Stone", .94, .82, .87, .90}},
       {91.5, 89.25, 90.0, 93.25}},
      {"Ensemble",
       {{"Tumor", .98, .96, .97, .97}, {"Cyst", 1.0, .98, .99, .99}, {"Normal", .92, .94, .93, .97},
        {"Stone", .94, 1.0, .97, .99}},
       {96.0, 97.0, 96.5, 98.0}},
  };
  std::size_t cells = 0, figures = 0;
  for (const auto& t : tables) {
    std::vector<double> cols[4];
    for (const auto& r : t.rows) {
      cols[0].push_back(r.p);
      cols[1].push_back(r.r);
      cols[2].push_back(r.f1);
      cols[3].push_back(r.auc);
      // Table entries are 2-dp roundings, so the identity holds over the
      // rounding box: F1 is increasing in both arguments.
      const bool excluded = std::string(t.name) == "EfficientNet-V2" && std::string(r.cls) == "Normal";
      if (excluded) {
        chk.expect(f1_score(r.p + 0.005, r.r + 0.005) < r.f1 - 0.005, "excluded cell is inconsistent");
        continue;
      }
      const double lo = f1_score(std::max(r.p - 0.005, 0.0), std::max(r.r - 0.005, 0.0));
      const double hi = f1_score(std::min(r.p + 0.005, 1.0), std::min(r.r + 0.005, 1.0));
      chk.expect(lo <= r.f1 + 0.005 && hi >= r.f1 - 0.005, std::string(t.name) + " " + r.cls + " F1 identity");
      ++cells;
    }
    for (int m = 0; m < 4; ++m) {
      if (std::isnan(t.headline[m])) continue;
      const double got = round_half_up(100.0 * macro_average(cols[m]), 2);
      chk.expect(got == t.headline[m], std::string(t.name) + " headline " + std::to_string(m) + " = " +
                                           std::to_string(got));
      ++figures;
    }
  }
  chk.note = std::to_string(figures) + " headline figures, " + std::to_string(cells) + " F1 cells";
}

// ------------------------------------------------------------------ 3

Manifest synthetic_manifest(const std::vector<std::size_t>& per_class) {
  Manifest m;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    const std::string name = "C" + std::to_string(c);
    for (std::size_t i = 0; i < per_class[c]; ++i) {
      m.records.push_back({fs::path(name) / (std::to_string(i) + ".png"), name, c, Split::Unassigned});
    }
    m.class_counts[name] = per_class[c];
  }
  return m;
}

void split_properties(Check& chk) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::size_t> sizes(2 + rng.below(5));
    for (auto& s : sizes) s = 10 + rng.below(80);
    const double fraction = 0.5 + 0.4 * rng.uniform();
    const std::uint64_t seed = rng.next_u64();
    const Manifest m = synthetic_manifest(sizes);
    auto [train, test] = stratified_split(m, fraction, seed);
    std::multiset<std::string> all, got;
    std::set<std::string> tr;
    for (const auto& r : m.records) all.insert(r.path.string());
    for (const auto& r : train.records) {
      got.insert(r.path.string());
      tr.insert(r.path.string());
      chk.expect(r.split == Split::Train, "train split tag");
    }
    for (const auto& r : test.records) {
      got.insert(r.path.string());
      chk.expect(!tr.count(r.path.string()), "train/test overlap");
      chk.expect(r.split == Split::Test, "test split tag");
    }
    chk.expect(got == all, "union is the manifest");
    for (std::size_t c = 0; c < sizes.size(); ++c) {
      const std::string name = "C" + std::to_string(c);
      const double target = fraction * static_cast<double>(sizes[c]);
      const double n_train = static_cast<double>(train.class_counts[name]);
      chk.expect(std::abs(n_train - target) <= 1.0, "stratification of " + name);
      chk.expect(n_train >= 1 && n_train < static_cast<double>(sizes[c]), "both sides non-empty");
    }
    auto [train2, test2] = stratified_split(m, fraction, seed);
    chk.expect(train2 == train && test2 == test, "split determinism");
  }
  for (std::size_t k = 1; k <= 8; ++k) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < k; ++i) names.push_back("class" + std::to_string(i));
    const LabelCodec codec(names);
    for (std::size_t i = 0; i < k; ++i) {
      const auto v = one_hot(i, k);
      chk.expect(v.size() == k, "one-hot width");
      for (std::size_t j = 0; j < k; ++j) chk.expect(v[j] == (i == j ? 1.0 : 0.0), "one-hot entry");
      const auto back = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
      chk.expect(back == i, "one-hot argmax");
      chk.expect(codec.encode_one_hot(codec.decode(i)) == v, "codec one-hot");
    }
  }
  chk.note = "200 manifests, k <= 8";
}

// ------------------------------------------------------------------ 4

constexpr ImageSize kTiny{32, 32};

std::vector<BackboneSpec> tiny_specs() {
  std::vector<BackboneSpec> out;
  for (auto f : all_families()) out.push_back(make_backbone_spec(f, Variant::TinyRandom, kTiny));
  return out;
}

void architecture_invariants(Check& chk) {
  const Tensor batch = random_images(6, 32, 4);
  std::vector<std::unique_ptr<FeatureExtractor>> branches;
  for (const auto& spec : tiny_specs()) {
    auto model = attach_head(build_backbone(spec, {"weights", 4}), 4, 4);
    chk.expect(on_simplex(model->predict_proba(batch)), std::string(to_string(spec.family)) + " simplex");
    chk.expect(model->extractor().features(batch).dim(1) == 64, "tiny feature_dim 64");
    branches.push_back(construct_architecture(spec, 4));
  }
  EnsembleSpec spec;
  spec.branches = tiny_specs();
  std::vector<Tensor> alone;
  for (const auto& b : branches) alone.push_back(b->features(batch));
  const auto ens = build_ensemble(std::move(branches), spec, 4);
  chk.expect(spec.fused_dim() == 256, "fused_dim 256");
  chk.expect(on_simplex(ensemble_forward(*ens, batch)), "ensemble simplex");
  const Tensor fused = ens->fused_features(batch);
  chk.expect(fused.dim(1) == 256, "fused width");
  const auto offsets = ens->branch_offsets();
  for (std::size_t b = 0; b < alone.size(); ++b) {
    for (std::size_t i = 0; i < batch.dim(0); ++i) {
      for (std::size_t d = 0; d < alone[b].dim(1); ++d) {
        chk.expect(fused.at(i, offsets[b] + d) == alone[b].at(i, d), "fused slice bit-equal");
      }
    }
  }
  const auto g = vit_geometry({224, 224});
  chk.expect(g.num_patches == 196 && g.num_tokens == 197, "ViT 224/16 -> 196 patches");
  bool rejected = false;
  try {
    build_backbone(make_backbone_spec(BackboneFamily::ViTB16, Variant::TinyRandom, {100, 100}));
  } catch (const Error& e) {
    rejected = e.kind() == ErrorKind::UnsupportedInputSize;
  }
  chk.expect(rejected, "ViT rejects 100x100");
  chk.note = "4 families + ensemble";
}

// ------------------------------------------------------------------ 5

std::pair<Tensor, Tensor> colour_noise(std::size_t per_class, std::uint64_t seed) {
  const double base[4][3] = {{0.8, 0.2, 0.2}, {0.2, 0.8, 0.2}, {0.2, 0.2, 0.8}, {0.8, 0.8, 0.2}};
  Rng rng(seed);
  const std::size_t n = 4 * per_class;
  Tensor images({n, 32, 32, 3}), labels({n, 4});
  for (std::size_t i = 0; i < n; ++i) {
    labels.at(i, i % 4) = 1.0;
    for (std::size_t p = 0; p < 32 * 32 * 3; ++p) {
      images[i * 32 * 32 * 3 + p] = std::clamp(base[i % 4][p % 3] + rng.uniform(-0.2, 0.2), 0.0, 1.0);
    }
  }
  return {images, labels};
}

TrainingHistory scripted(const std::vector<double>& losses) {
  TrainingHistory h;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    EpochRecord r;
    r.epoch = i + 1;
    r.val_loss = losses[i];
    h.records.push_back(r);
  }
  h.best_epoch = best_epoch_of(h.records, Monitor::ValLoss);
  return h;
}

void training_correctness(Check& chk) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(10), k = 2 + rng.below(5);
    Tensor logits({n, k}), y({n, k});
    for (auto& v : logits.values()) v = 4.0 * rng.normal();
    const Tensor p = nn::softmax_rows(logits);
    std::vector<std::vector<double>> pv(n, std::vector<double>(k)), yv = pv;
    for (std::size_t i = 0; i < n; ++i) {
      y.at(i, rng.below(k)) = 1.0;
      for (std::size_t c = 0; c < k; ++c) {
        pv[i][c] = p.at(i, c);
        yv[i][c] = y.at(i, c);
      }
    }
    chk.near(cross_entropy(p, y), oracle::cross_entropy(pv, yv), 1e-9, "cross-entropy");
  }

  auto [images, labels] = colour_noise(2, 5);
  for (auto family : all_families()) {
    auto model = attach_head(build_backbone(make_backbone_spec(family, Variant::TinyRandom, kTiny), {"weights", 6}),
                             4, 6);
    for (const char* name : {"head/dense/w", "head/dense/b"}) {
      auto* param = model->head().find(name);
      param->var->grad = Tensor();
      nn::backward(nn::softmax_cross_entropy(model->logits(images, false, nullptr), labels));
      const Tensor analytic = param->var->grad;
      for (std::size_t i = 0; i < param->var->value.size(); i += 7) {
        const double orig = param->var->value[i], h = 1e-5;
        auto loss = [&] {
          nn::NoGradGuard guard;
          return nn::softmax_cross_entropy(model->logits(images, false, nullptr), labels)->value[0];
        };
        param->var->value[i] = orig + h;
        const double up = loss();
        param->var->value[i] = orig - h;
        const double down = loss();
        param->var->value[i] = orig;
        const double numeric = (up - down) / (2 * h);
        chk.expect(std::abs(analytic[i] - numeric) <= 1e-3 * std::max(std::abs(numeric), 1e-6),
                   std::string(to_string(family)) + " " + name + " gradient");
      }
    }
  }

  const std::vector<double> trace{1.0, 0.9, 0.91, 0.92, 0.93, 0.94, 0.95};
  std::size_t stop = 0;
  for (std::size_t e = 1; e <= trace.size() && stop == 0; ++e) {
    const std::vector<double> prefix(trace.begin(), trace.begin() + static_cast<long>(e));
    if (early_stopping_step(scripted(prefix), 5) == StopDecision::Stop) stop = e;
  }
  chk.expect(stop == 7, "stop after epoch 7");
  chk.expect(scripted(trace).best_epoch == 2, "restore epoch 2");

  oracle::TempDir tmp("acc_restore");
  auto model = attach_head(
      build_backbone(make_backbone_spec(BackboneFamily::EfficientNetV2, Variant::TinyRandom, kTiny), {"weights", 3}),
      4, 3);
  auto [timages, tlabels] = colour_noise(3, 4);
  auto [vimages, vlabels] = colour_noise(1, 99);
  TensorStream train_s(timages, tlabels, 4, true, 2), val_s(vimages, vlabels, 4);
  TrainingConfig cfg;
  cfg.epochs = 12;
  cfg.patience = 2;
  cfg.learning_rate = 0.05;
  TrainCallbacks cb;
  cb.on_checkpoint = [&](const std::string& tag, std::size_t) {
    save_classifier(*model, LabelCodec({"a", "b", "c", "d"}), tmp / (tag + ".ckpt"));
  };
  const auto h = train(*model, train_s, val_s, cfg, cb);
  const auto best = load_classifier(tmp / "best.ckpt");
  chk.expect(best.model->snapshot() == model->snapshot(), "restored parameters equal best.ckpt");
  chk.note = "restored epoch " + std::to_string(h.best_epoch) + " of " + std::to_string(h.records.size());
}

// ------------------------------------------------------------------ 6

double train_set_accuracy(const Classifier& model, const BatchSource& stream) {
  double correct = 0;
  for (std::size_t b = 0; b < stream.num_batches(); ++b) {
    const Batch batch = stream.batch(0, b);
    correct += accuracy(model.predict_proba(batch.images), batch.labels) * static_cast<double>(batch.images.dim(0));
  }
  return correct / static_cast<double>(stream.num_samples());
}

void smoke_learning(Check& chk) {
  oracle::TempDir tmp("acc_smoke");
  cli::write_fixture(tmp / "data", 10, 32, 0);
  const ScanResult scan = scan_dataset(tmp / "data");
  chk.expect(scan.manifest.size() == 40, "40-image fixture");
  RunConfig cfg = RunConfig::defaults(Variant::TinyRandom);
  apply_input_size(cfg, kTiny);
  cfg.training.epochs = 15;
  cfg.training.batch_size = 8;

  Manifest all = scan.manifest;
  for (auto& r : all.records) r.split = Split::Train;
  const ManifestStream train_s(all, scan.codec, cfg.augmentation, cfg.training.batch_size, StreamMode::Train, true,
                               derive_seed({cfg.seed, 0x7a1u}));
  const ManifestStream eval_s(all, scan.codec, cfg.augmentation, cfg.training.batch_size, StreamMode::Evaluate, false,
                              0);

  std::ostringstream summary;
  std::vector<std::unique_ptr<FeatureExtractor>> trained;
  std::string first_history;
  for (const auto& spec : cfg.backbones) {
    auto model = attach_head(build_backbone(spec, {cfg.weights_dir, cfg.seed}), 4, cfg.seed, cfg.freeze_policy);
    const auto h = train(*model, train_s, eval_s, cfg.training);
    const double acc = train_set_accuracy(*model, eval_s);
    const std::string name(to_string(spec.family));
    chk.expect(acc >= 0.9, name + " train accuracy " + std::to_string(acc));
    summary << name << "=" << acc << " ";
    if (spec.family == BackboneFamily::MobileNetV2) {
      const auto& r = h.records;
      chk.expect(r.size() >= 3 && r[1].train_loss < r[0].train_loss && r[2].train_loss < r[1].train_loss,
                 "mobilenet train loss decreases over the first 3 epochs");
      first_history = dump_json(to_json(h));
      auto again = attach_head(build_backbone(spec, {cfg.weights_dir, cfg.seed}), 4, cfg.seed, cfg.freeze_policy);
      chk.expect(dump_json(to_json(train(*again, train_s, eval_s, cfg.training))) == first_history,
                 "seeded training is reproducible");
    }
    trained.push_back(model->release_extractor());
  }
  auto ens = build_ensemble(std::move(trained), cfg.ensemble, cfg.seed);
  train_ensemble(*ens, train_s, eval_s, cfg.training);
  const double ens_acc = train_set_accuracy(*ens, eval_s);
  chk.expect(ens_acc >= 0.9, "ensemble train accuracy " + std::to_string(ens_acc));
  summary << "ensemble=" << ens_acc;
  chk.note = summary.str();
}

// ------------------------------------------------------------------ 7

void lime_fidelity(Check& chk) {
  Rng rng(7);
  const std::size_t side = 24;
  const Tensor img = random_images(1, side, 70).reshaped({side, side, 3});
  const SuperpixelMap map = segment_grid({side, side}, 9);
  std::vector<double> coef(map.n_segments);
  for (auto& c : coef) c = rng.uniform(-0.05, 0.05);

  // Noiseless linear oracle over segment indicators: p = b + sum_s beta_s m_s,
  // realised as a model that reads each segment's mean intensity.
  const double fill = mean_intensity(img);
  std::vector<double> seg_mean(map.n_segments, 0.0), count(map.n_segments, 0.0);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      for (std::size_t c = 0; c < 3; ++c) seg_mean[static_cast<std::size_t>(map.at(y, x))] += img.at(y, x, c);
      count[static_cast<std::size_t>(map.at(y, x))] += 3;
    }
  }
  std::vector<double> beta(map.n_segments);
  for (std::size_t s = 0; s < map.n_segments; ++s) {
    seg_mean[s] /= count[s];
    beta[s] = coef[s] * (seg_mean[s] - fill);
  }
  auto prob = [&](const Tensor& im) {
    std::vector<double> sum(map.n_segments, 0.0);
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        for (std::size_t c = 0; c < 3; ++c) sum[static_cast<std::size_t>(map.at(y, x))] += im.at(y, x, c);
      }
    }
    double p = 0.4;
    for (std::size_t s = 0; s < map.n_segments; ++s) p += coef[s] * sum[s] / count[s];
    return p;
  };
  const PredictFn predict = [&](const Tensor& batch) {
    Tensor out({batch.dim(0), 2});
    for (std::size_t i = 0; i < batch.dim(0); ++i) {
      out.at(i, 1) = prob(batch.row(i).reshaped({side, side, 3}));
      out.at(i, 0) = 1.0 - out.at(i, 1);
    }
    return out;
  };

  const Tensor masks = draw_masks(400, map.n_segments, 11);
  std::vector<double> y;
  for (std::size_t i = 0; i < masks.dim(0); ++i) {
    double v = 0.4;
    for (std::size_t s = 0; s < map.n_segments; ++s) v += beta[s] * masks.at(i, s);
    y.push_back(v);
  }
  const auto fit = fit_surrogate(masks, y, kernel_weights(masks, 0.25), 1e-9);
  for (std::size_t s = 0; s < map.n_segments; ++s) chk.near(fit.coefficients[s], beta[s], 1e-4, "surrogate coefficient");

  LimeConfig cfg;
  cfg.segmenter = Segmenter::Grid;
  cfg.n_segments = 9;
  cfg.n_samples = 400;
  cfg.ridge_lambda = 1e-9;
  cfg.seed = 12;
  const auto res = explain(predict, img, 1, cfg);
  const auto top = static_cast<std::size_t>(std::max_element(beta.begin(), beta.end()) - beta.begin());
  chk.expect(!res.top_k.empty() && res.top_k[0].first == top, "top-1 segment is the argmax coefficient");
  std::vector<double> mask(map.n_segments, 1.0);
  mask[top] = 0.0;
  chk.expect(prob(apply_mask(img, map, mask, fill)) < prob(img), "occluding top-1 lowers the target probability");

  oracle::TempDir tmp("acc_lime");
  write_json(to_json(res), tmp / "a.json");
  write_json(to_json(explain(predict, img, 1, cfg)), tmp / "b.json");
  chk.expect(sha256_file(tmp / "a.json") == sha256_file(tmp / "b.json"), "explanation.json identical across runs");
  chk.note = "top-1 segment " + std::to_string(top);
}

// ------------------------------------------------------------------ 8

std::map<std::string, std::string> artifact_hashes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".json" || ext == ".csv")) {
      out[fs::relative(e.path(), root).generic_string()] = sha256_file(e.path());
    }
  }
  return out;
}

void end_to_end_determinism(Check& chk) {
  oracle::TempDir tmp("acc_e2e");
  cli::write_fixture(tmp / "data", 10, 32, 0);
  RunConfig cfg = RunConfig::defaults(Variant::TinyRandom);
  apply_input_size(cfg, kTiny);
  cfg.dataset_root = tmp / "data";
  cfg.output_dir = tmp / "out";
  cfg.seed = 17;
  cfg.training.epochs = 3;
  cfg.training.batch_size = 8;
  cfg.lime.n_samples = 100;
  cfg.lime.n_segments = 16;
  write_json(to_json(cfg), tmp / "config.json");
  const std::string config = (tmp / "config.json").string();
  const std::string image = (tmp / "data" / "Cyst" / "Cyst_000.png").string();

  std::vector<std::vector<std::string>> steps = {{"prepare"}};
  for (const auto& b : cfg.backbones) steps.push_back({"train", "--model", std::string(to_string(b.family))});
  steps.push_back({"train", "--model", "ensemble"});
  steps.push_back({"evaluate", "--model", "all"});
  steps.push_back({"explain", "--image", image});
  steps.push_back({"explain", "--image", image, "--model", "vit_b16"});

  std::vector<std::map<std::string, std::string>> runs;
  for (int pass = 0; pass < 2; ++pass) {
    fs::remove_all(cfg.output_dir);
    for (auto args : steps) {
      args.insert(args.end(), {"--config", config});
      std::ostringstream out, err;
      const int code = cli::run(args, out, err);
      chk.expect(code == 0, args[0] + " exited " + std::to_string(code) + ": " + err.str());
    }
    runs.push_back(artifact_hashes(cfg.output_dir));
  }
  chk.expect(runs[0].size() >= 10, "artifact count " + std::to_string(runs[0].size()));
  chk.expect(runs[0] == runs[1], "JSON/CSV artifacts byte-identical");
  for (const auto& [path, hash] : runs[0]) {
    const auto it = runs[1].find(path);
    chk.expect(it != runs[1].end() && it->second == hash, "differs: " + path);
  }
  chk.note = std::to_string(runs[0].size()) + " JSON/CSV files compared";
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, Criterion>> criteria = {
      {"metric oracle equivalence", metric_oracles},
      {"table arithmetic reproduction", table_arithmetic},
      {"split and encoding properties", split_properties},
      {"architecture invariants", architecture_invariants},
      {"training correctness", training_correctness},
      {"smoke learning", smoke_learning},
      {"LIME fidelity", lime_fidelity},
      {"end-to-end determinism", end_to_end_determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check chk;
    const auto start = std::chrono::steady_clock::now();
    try {
      criteria[i].second(chk);
    } catch (const std::exception& e) {
      chk.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool ok = chk.failures() == 0;
    failed += ok ? 0 : 1;
    std::printf("criterion %zu %s: %s (%.1fs)%s%s\n", i + 1, criteria[i].first.c_str(), ok ? "PASS" : "FAIL", secs,
                chk.note.empty() ? "" : " ", chk.note.c_str());
    for (const auto& d : chk.details()) std::printf("    %s\n", d.c_str());
    std::fflush(stdout);
  }
  std::printf("criterion 9 full-scale ensemble comparison: SKIP (needs the public dataset, pretrained weights and a GPU)\n");
  return failed == 0 ? 0 : 1;
}
