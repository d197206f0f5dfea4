#include "nnqc/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nnqc/digest.hpp"
#include "nnqc/errors.hpp"
#include "nnqc/nifti.hpp"
#include "nnqc/phantom.hpp"
#include "nnqc/rng.hpp"
#include "nnqc/torchutil.hpp"

namespace nnqc::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string now_rfc3339() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::exists(path))
    throw PrerequisiteError(what + " not found: " + path +
                            " (run the earlier pipeline stage first)");
}

json manifest_to_json(const CheckpointManifest& m) {
  return json{{"schema_version", 1},
              {"stage", m.stage},
              {"dataset_name", m.dataset_name},
              {"seed", m.seed},
              {"epochs", m.epochs},
              {"fingerprint_hash", m.fingerprint_hash},
              {"config_digest", m.config_digest},
              {"weight_digests", m.weight_digests},
              {"holdout_dice", m.holdout_dice},
              {"stage1_digest", m.stage1_digest},
              {"encoder_id", m.encoder_id},
              {"latent_scale", m.latent_scale},
              {"schedule_family", m.schedule_family},
              {"created_at", m.created_at}};
}

}  // namespace

Paths Paths::derive(const config::RunConfig& cfg) {
  return Paths{cfg.out_dir + "/" + cfg.dataset_name};
}

std::string CheckpointManifest::content_digest() const {
  json j = manifest_to_json(*this);
  j.erase("created_at");
  return sha256_hex(j.dump());
}

void CheckpointManifest::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path);
  out << manifest_to_json(*this).dump(2) << "\n";
}

CheckpointManifest CheckpointManifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + path + ": " + e.what());
  }
  CheckpointManifest m;
  try {
    m.stage = j.at("stage").get<std::string>();
    m.dataset_name = j.at("dataset_name").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.epochs = j.at("epochs").get<int>();
    m.fingerprint_hash = j.at("fingerprint_hash").get<std::string>();
    m.config_digest = j.at("config_digest").get<std::string>();
    m.weight_digests =
        j.at("weight_digests").get<std::map<std::string, std::string>>();
    m.holdout_dice = j.at("holdout_dice").get<double>();
    m.stage1_digest = j.at("stage1_digest").get<std::string>();
    m.encoder_id = j.at("encoder_id").get<std::string>();
    m.latent_scale = j.at("latent_scale").get<double>();
    m.schedule_family = j.at("schedule_family").get<std::string>();
    m.created_at = j.at("created_at").get<std::string>();
  } catch (const json::exception& e) {
    throw IoError("manifest missing fields " + path + ": " + e.what());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Subject split

SubjectSplit split_subjects(const std::vector<std::string>& ids,
                            double eval_fraction, std::uint64_t seed) {
  if (ids.size() < 2)
    throw ConfigError("split: need at least 2 subjects for train/eval");
  std::vector<std::string> order = ids;
  std::sort(order.begin(), order.end());
  RandomStream rs(mix64(seed, 0x5917));
  rs.shuffle(order);

  std::size_t n_eval =
      static_cast<std::size_t>(std::ceil(eval_fraction * order.size()));
  n_eval = std::clamp<std::size_t>(n_eval, 1, order.size() - 1);

  SubjectSplit split;
  split.seed = seed;
  split.eval.assign(order.end() - n_eval, order.end());
  split.train.assign(order.begin(), order.end() - n_eval);
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.eval.begin(), split.eval.end());
  return split;
}

void SubjectSplit::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write split: " + path);
  out << json{{"schema_version", 1},
              {"seed", seed},
              {"train", train},
              {"eval", eval}}
             .dump(2)
      << "\n";
}

SubjectSplit SubjectSplit::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read split: " + path);
  json j;
  try {
    in >> j;
    SubjectSplit s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.train = j.at("train").get<std::vector<std::string>>();
    s.eval = j.at("eval").get<std::vector<std::string>>();
    return s;
  } catch (const json::exception& e) {
    throw IoError("malformed split " + path + ": " + e.what());
  }
}

MaskGrid3D aggregate_subject(const std::vector<MaskGrid2D>& slices,
                             const fingerprint::RestoreMeta& meta) {
  return fingerprint::postprocess(slices, meta);
}

// ---------------------------------------------------------------------------
// Model loading

namespace {

void verify_weights(const CheckpointManifest& m, const std::string& dir) {
  for (const auto& [name, digest] : m.weight_digests) {
    const std::string path = dir + "/" + name;
    require_file(path, m.stage + " weights");
    if (sha256_file_hex(path) != digest)
      throw PrerequisiteError("weight file digest mismatch: " + path +
                              " (checkpoint is corrupt or was edited)");
  }
}

}  // namespace

ldm::SampleContext LoadedModel::sample_context() const {
  ldm::SampleContext ctx;
  ctx.vae = &vae;
  ctx.unet = &unet;
  ctx.e1 = &e1;
  ctx.e2 = &e2;
  ctx.fusion = &fusion;
  ctx.sched = &sched;
  ctx.latent_scale = latent_scale;
  ctx.num_labels = fp.num_labels;
  return ctx;
}

LoadedModel load_model(const config::RunConfig& cfg, bool force) {
  const Paths paths = Paths::derive(cfg);
  require_file(paths.fingerprint(), "fingerprint");
  require_file(paths.vae_dir() + "/manifest.json", "stage-1 checkpoint");
  require_file(paths.ldm_dir() + "/manifest.json", "stage-2 checkpoint");

  LoadedModel model;
  model.fp = fingerprint::DatasetFingerprint::load(paths.fingerprint());
  model.vae_manifest =
      CheckpointManifest::load(paths.vae_dir() + "/manifest.json");
  model.ldm_manifest =
      CheckpointManifest::load(paths.ldm_dir() + "/manifest.json");

  const std::string fp_hash = model.fp.hash();
  for (const CheckpointManifest* m :
       {&model.vae_manifest, &model.ldm_manifest}) {
    if (m->fingerprint_hash != fp_hash && !force)
      throw PrerequisiteError(
          m->stage +
          " checkpoint was trained on a different dataset fingerprint "
          "(pass --force to use it anyway)");
  }
  if (model.ldm_manifest.stage1_digest != model.vae_manifest.content_digest())
    throw PrerequisiteError(
        "stage-2 checkpoint references a different stage-1 checkpoint");
  verify_weights(model.vae_manifest, paths.vae_dir());
  verify_weights(model.ldm_manifest, paths.ldm_dir());

  manifold::VaeConfig vae_cfg = cfg.vae;
  vae_cfg.num_labels = model.fp.num_labels;
  model.vae = manifold::SegVae(vae_cfg);
  torchutil::load_module(*model.vae, paths.vae_dir() + "/vae.pt");

  model.unet = ldm::DiffusionUnet(cfg.ldm, cfg.toe.d_c);
  model.e1 = toe::PositionalExpert(cfg.toe);
  model.fusion = toe::Fusion(cfg.toe);
  toe::ToeConfig e2_cfg = cfg.toe;
  e2_cfg.encoder_id = model.ldm_manifest.encoder_id;
  model.e2 = toe::RandomCnnEncoder(e2_cfg);
  torchutil::load_module(*model.unet, paths.ldm_dir() + "/unet.pt");
  torchutil::load_module(*model.e1, paths.ldm_dir() + "/e1.pt");
  torchutil::load_module(*model.fusion, paths.ldm_dir() + "/fusion.pt");

  model.sched =
      ldm::NoiseSchedule::make(model.ldm_manifest.schedule_family,
                               cfg.ldm.t_train, cfg.ldm.beta_start,
                               cfg.ldm.beta_end);
  model.latent_scale = model.ldm_manifest.latent_scale;
  return model;
}

// ---------------------------------------------------------------------------
// Commands

void cmd_phantom_gen(const config::RunConfig& cfg) {
  phantom::PhantomSpec spec = cfg.phantom;
  spec.seed = cfg.seed;
  const std::vector<VolumePair> subjects = phantom::generate_phantoms(spec);
  phantom::write_phantom_dataset(subjects, cfg.dataset_dir);
  std::cerr << "wrote " << subjects.size() << " phantom subjects to "
            << cfg.dataset_dir << "\n";
}

void cmd_fingerprint(const config::RunConfig& cfg) {
  const std::vector<VolumePair> dataset =
      phantom::load_dataset(cfg.dataset_dir);
  const fingerprint::DatasetFingerprint fp =
      fingerprint::extract_fingerprint(dataset, cfg.fp_options);

  const Paths paths = Paths::derive(cfg);
  fs::create_directories(paths.root);
  fp.save(paths.fingerprint());

  std::vector<std::string> ids;
  for (const auto& p : dataset) ids.push_back(p.subject_id);
  split_subjects(ids, cfg.eval_fraction, cfg.seed).save(paths.split());
  std::cerr << "fingerprint " << fp.hash().substr(0, 12) << " over "
            << dataset.size() << " subjects -> " << paths.fingerprint()
            << "\n";
}

namespace {

// Clean GT slices of the training split (stage-1 input).
std::vector<manifold::GtSlice> collect_gt_slices(
    const std::vector<VolumePair>& dataset, const SubjectSplit& split,
    const fingerprint::DatasetFingerprint& fp) {
  const std::set<std::string> train(split.train.begin(), split.train.end());
  std::vector<manifold::GtSlice> slices;
  for (const auto& pair : dataset) {
    if (!train.count(pair.subject_id)) continue;
    fingerprint::SlicePack pack = fingerprint::preprocess(pair, fp);
    for (auto& s : pack.slices)
      slices.push_back({pair.subject_id, std::move(s.mask)});
  }
  if (slices.empty())
    throw PrerequisiteError("training split produced no slices");
  return slices;
}

}  // namespace

void cmd_train_vae(const config::RunConfig& cfg) {
  const Paths paths = Paths::derive(cfg);
  require_file(paths.fingerprint(), "fingerprint");
  require_file(paths.split(), "subject split");
  const auto fp = fingerprint::DatasetFingerprint::load(paths.fingerprint());
  const SubjectSplit split = SubjectSplit::load(paths.split());
  const auto dataset = phantom::load_dataset(cfg.dataset_dir);

  manifold::VaeConfig vae_cfg = cfg.vae;
  vae_cfg.num_labels = fp.num_labels;
  const auto slices = collect_gt_slices(dataset, split, fp);
  std::cerr << "stage 1: " << slices.size() << " GT slices, "
            << vae_cfg.epochs << " epochs\n";
  manifold::VaeTrainResult result =
      manifold::train_vae_gan(slices, vae_cfg, cfg.seed);
  for (const auto& e : result.log)
    std::cerr << "  epoch " << e.epoch << " loss " << e.loss_total
              << " holdout_dice " << e.holdout_dice << "\n";

  fs::create_directories(paths.vae_dir());
  torchutil::save_module(*result.vae, paths.vae_dir() + "/vae.pt");
  torchutil::save_module(*result.disc, paths.vae_dir() + "/disc.pt");

  CheckpointManifest m;
  m.stage = "vae";
  m.dataset_name = cfg.dataset_name;
  m.seed = cfg.seed;
  m.epochs = vae_cfg.epochs;
  m.fingerprint_hash = fp.hash();
  m.config_digest = cfg.digest();
  m.weight_digests["vae.pt"] = sha256_file_hex(paths.vae_dir() + "/vae.pt");
  m.weight_digests["disc.pt"] = sha256_file_hex(paths.vae_dir() + "/disc.pt");
  m.holdout_dice = result.log.empty() ? 0.0 : result.log.back().holdout_dice;
  m.created_at = now_rfc3339();
  m.save(paths.vae_dir() + "/manifest.json");
}

void cmd_train_ldm(const config::RunConfig& cfg) {
  const Paths paths = Paths::derive(cfg);
  require_file(paths.fingerprint(), "fingerprint");
  require_file(paths.split(), "subject split");
  require_file(paths.vae_dir() + "/manifest.json", "stage-1 checkpoint");
  const auto fp = fingerprint::DatasetFingerprint::load(paths.fingerprint());
  const SubjectSplit split = SubjectSplit::load(paths.split());

  const CheckpointManifest vae_manifest =
      CheckpointManifest::load(paths.vae_dir() + "/manifest.json");
  if (vae_manifest.fingerprint_hash != fp.hash())
    throw PrerequisiteError(
        "stage-1 checkpoint fingerprint does not match the dataset");
  verify_weights(vae_manifest, paths.vae_dir());

  manifold::VaeConfig vae_cfg = cfg.vae;
  vae_cfg.num_labels = fp.num_labels;
  manifold::SegVae vae(vae_cfg);
  torchutil::load_module(*vae, paths.vae_dir() + "/vae.pt");

  // Degradation corpus over the training split, persisted for inspection
  // and reuse by the evaluation tooling.
  const auto dataset = phantom::load_dataset(cfg.dataset_dir);
  const std::set<std::string> train(split.train.begin(), split.train.end());
  std::vector<degrade::SubjectSlices> subjects;
  for (const auto& pair : dataset) {
    if (!train.count(pair.subject_id)) continue;
    subjects.push_back({pair.subject_id, fingerprint::preprocess(pair, fp)});
  }
  degrade::BuildResult built =
      degrade::build_corpus(subjects, degrade::five_bands(),
                            mix64(cfg.seed, 0xc0), cfg.degrade);
  std::cerr << "stage 2 corpus: " << built.corpus.pairs.size() << " pairs, "
            << built.skipped.size() << " skipped\n";
  fs::create_directories(paths.corpus_dir());
  built.corpus.save(paths.corpus_dir());

  const toe::RandomCnnEncoder e2(cfg.toe);
  const std::string e2_digest_before = torchutil::module_digest(*e2);
  const ldm::NoiseSchedule sched =
      ldm::NoiseSchedule::make(cfg.ldm.schedule, cfg.ldm.t_train,
                               cfg.ldm.beta_start, cfg.ldm.beta_end);
  const std::string vae_digest_before = torchutil::module_digest(*vae);

  ldm::LdmTrainResult result =
      ldm::train_ldm(vae, built.corpus, e2, cfg.toe, sched, cfg.ldm,
                     cfg.seed);
  for (const auto& e : result.log)
    std::cerr << "  epoch " << e.epoch << " loss " << e.loss << "\n";

  // Freeze contract: stage 2 must not have touched stage 1 or the vision
  // expert. A violation here is a programming error, not user error.
  if (torchutil::module_digest(*vae) != vae_digest_before ||
      torchutil::module_digest(*e2) != e2_digest_before)
    throw TrainingDivergence("frozen module changed during stage-2 training");

  fs::create_directories(paths.ldm_dir());
  torchutil::save_module(*result.unet, paths.ldm_dir() + "/unet.pt");
  torchutil::save_module(*result.e1, paths.ldm_dir() + "/e1.pt");
  torchutil::save_module(*result.fusion, paths.ldm_dir() + "/fusion.pt");

  CheckpointManifest m;
  m.stage = "ldm";
  m.dataset_name = cfg.dataset_name;
  m.seed = cfg.seed;
  m.epochs = cfg.ldm.epochs;
  m.fingerprint_hash = fp.hash();
  m.config_digest = cfg.digest();
  m.weight_digests["unet.pt"] = sha256_file_hex(paths.ldm_dir() + "/unet.pt");
  m.weight_digests["e1.pt"] = sha256_file_hex(paths.ldm_dir() + "/e1.pt");
  m.weight_digests["fusion.pt"] =
      sha256_file_hex(paths.ldm_dir() + "/fusion.pt");
  m.stage1_digest = vae_manifest.content_digest();
  m.encoder_id = cfg.toe.encoder_id;
  m.latent_scale = result.latent_scale;
  m.schedule_family = cfg.ldm.schedule;
  m.created_at = now_rfc3339();
  m.save(paths.ldm_dir() + "/manifest.json");
}

// ---------------------------------------------------------------------------
// Inference helpers

namespace {

VolumePair load_pair(const std::string& image_path,
                     const std::string& mask_path) {
  require_file(image_path, "image volume");
  require_file(mask_path, "mask volume");
  NiftiVolume img = read_nifti(image_path);
  NiftiVolume msk = read_nifti(mask_path);

  VolumePair pair;
  std::string id = fs::path(image_path).filename().string();
  if (id.ends_with(".nii.gz")) id.resize(id.size() - 7);
  else if (id.ends_with(".nii")) id.resize(id.size() - 4);
  pair.subject_id = id;
  pair.spacing = img.spacing;
  pair.orientation = orientation_code(img.affine);
  pair.image = std::move(img.data);
  pair.mask = round_to_mask(msk.data);
  pair.validate();
  return pair;
}

/// One pGT slice per input slice, seeded by (seed, subject, slice).
std::vector<MaskGrid2D> sample_slices(const LoadedModel& model,
                                      const fingerprint::SlicePack& pack,
                                      const std::string& subject_id,
                                      int steps, std::uint64_t seed) {
  const ldm::SampleContext ctx = model.sample_context();
  std::vector<MaskGrid2D> out;
  out.reserve(pack.slices.size());
  for (std::size_t i = 0; i < pack.slices.size(); ++i) {
    const auto& s = pack.slices[i];
    out.push_back(ldm::sample_pgt(
        s.mask, s.image, s.slice_ratio, steps,
        mix64(mix64(seed, hash_str(subject_id)), i), ctx));
  }
  return out;
}

void append_scores(metrics::QCReport& report, const std::string& subject,
                   const std::string& tag, const std::string& metric,
                   const MaskGrid3D& candidate, const MaskGrid3D& pgt,
                   const MaskGrid3D* gt, const Spacing& spacing) {
  const bool want_dsc = metric == "dsc" || metric == "all";
  const bool want_hd = metric == "hd95" || metric == "all";
  if (want_dsc) {
    metrics::ScorePair p;
    p.subject_id = subject;
    p.metric = "dsc";
    p.tag = tag;
    p.pseudo_score = metrics::dsc(candidate, pgt);
    if (gt) {
      p.real_score = metrics::dsc(candidate, *gt);
      p.real_available = true;
    }
    report.pairs.push_back(p);
  }
  if (want_hd) {
    metrics::ScorePair p;
    p.subject_id = subject;
    p.metric = "hd95";
    p.tag = tag;
    const metrics::Hd95Result pseudo = metrics::hd95(candidate, pgt, spacing);
    p.pseudo_score = pseudo.value;
    p.flagged = !pseudo.defined();
    if (gt) {
      const metrics::Hd95Result real = metrics::hd95(candidate, *gt, spacing);
      p.real_score = real.value;
      p.real_available = true;
      p.flagged = p.flagged || !real.defined();
    }
    report.pairs.push_back(p);
  }
}

void check_metric(const std::string& metric) {
  if (metric != "dsc" && metric != "hd95" && metric != "all")
    throw ConfigError("metric must be one of: dsc, hd95, all");
}

void write_report(const metrics::QCReport& report, const Paths& paths,
                  const std::string& out_prefix,
                  const std::string& default_name) {
  std::string prefix = out_prefix;
  if (prefix.empty()) {
    fs::create_directories(paths.reports_dir());
    prefix = paths.reports_dir() + "/" + default_name;
  } else if (fs::path(prefix).has_parent_path()) {
    fs::create_directories(fs::path(prefix).parent_path());
  }
  report.write_csv(prefix + ".csv");
  report.write_json(prefix + ".json");
  std::cerr << "report written to " << prefix << ".{csv,json}\n";
}

}  // namespace

metrics::QCReport cmd_qc(const config::RunConfig& cfg, const QcOptions& opt) {
  check_metric(opt.metric);
  const int steps = opt.steps > 0 ? opt.steps : cfg.ldm.sample_steps;
  const std::uint64_t seed = opt.seed ? opt.seed : cfg.seed;
  const Paths paths = Paths::derive(cfg);
  const LoadedModel model = load_model(cfg, opt.force);

  const VolumePair pair = load_pair(opt.image_path, opt.mask_path);
  const fingerprint::SlicePack pack = fingerprint::preprocess(pair, model.fp);
  const std::vector<MaskGrid2D> pgt_slices =
      sample_slices(model, pack, pair.subject_id, steps, seed);
  const MaskGrid3D pgt = aggregate_subject(pgt_slices, pack.meta);

  MaskGrid3D gt;
  const bool have_gt = !opt.gt_path.empty();
  if (have_gt) {
    NiftiVolume gt_vol = read_nifti(opt.gt_path);
    gt = round_to_mask(gt_vol.data);
    if (!gt.same_shape(pair.mask))
      throw ShapeError("GT volume shape differs from the mask volume");
  }

  metrics::QCReport report;
  append_scores(report, pair.subject_id, "qc", opt.metric, pair.mask, pgt,
                have_gt ? &gt : nullptr, pair.spacing);
  report.summarize();
  report.extra["sample_steps"] = steps;
  report.extra["seed"] = static_cast<double>(seed);

  if (opt.save_pgt) {
    const std::string pgt_path =
        (opt.out_prefix.empty()
             ? paths.reports_dir() + "/qc_" + pair.subject_id
             : opt.out_prefix) +
        "_pgt.nii.gz";
    if (fs::path(pgt_path).has_parent_path())
      fs::create_directories(fs::path(pgt_path).parent_path());
    write_nifti_mask(pgt_path, pgt, pair.spacing);
  }
  write_report(report, paths, opt.out_prefix, "qc_" + pair.subject_id);
  return report;
}

namespace {

/// Degrades every non-empty slice of a pack to `band`. Unreachable bands
/// fall back to a crude proxy (GT for light bands, empty for heavy ones)
/// and are counted, never fatal: evaluation needs *a* candidate mask of
/// roughly the requested quality, not an exact band hit.
std::vector<MaskGrid2D> degrade_pack(const fingerprint::SlicePack& pack,
                                     const degrade::QualityBand& band,
                                     const std::string& subject_id,
                                     std::uint64_t seed,
                                     const degrade::DegradeParams& params,
                                     int* fallbacks) {
  std::vector<MaskGrid2D> out;
  out.reserve(pack.slices.size());
  for (std::size_t i = 0; i < pack.slices.size(); ++i) {
    const auto& s = pack.slices[i];
    const bool empty =
        std::all_of(s.mask.data.begin(), s.mask.data.end(),
                    [](int v) { return v == 0; });
    if (empty) {
      out.push_back(s.mask);
      continue;
    }
    const std::uint64_t slice_seed =
        mix64(mix64(seed, hash_str(subject_id + "/" + band.tag())), i);
    try {
      out.push_back(degrade::degrade_to_band(s.image, s.mask, s.slice_ratio,
                                             band, slice_seed, params)
                        .degraded);
    } catch (const BandUnreachable&) {
      ++*fallbacks;
      out.push_back(band.hi >= 0.5 ? s.mask : MaskGrid2D(s.mask.h, s.mask.w));
    }
  }
  return out;
}

}  // namespace

metrics::QCReport cmd_evaluate(const config::RunConfig& cfg,
                               const EvaluateOptions& opt) {
  check_metric(opt.metric);
  const int steps = opt.steps > 0 ? opt.steps : cfg.ldm.sample_steps;
  const std::uint64_t seed = opt.seed ? opt.seed : cfg.seed;
  const Paths paths = Paths::derive(cfg);
  require_file(paths.split(), "subject split");
  const LoadedModel model = load_model(cfg, opt.force);
  const SubjectSplit split = SubjectSplit::load(paths.split());
  const auto dataset = phantom::load_dataset(cfg.dataset_dir);
  const std::set<std::string> eval_ids(split.eval.begin(), split.eval.end());

  metrics::QCReport report;
  int fallbacks = 0;
  for (const auto& pair : dataset) {
    if (!eval_ids.count(pair.subject_id)) continue;
    const fingerprint::SlicePack pack =
        fingerprint::preprocess(pair, model.fp);

    for (const degrade::QualityBand& band : degrade::five_bands()) {
      const std::vector<MaskGrid2D> degraded_slices = degrade_pack(
          pack, band, pair.subject_id, mix64(seed, 0xe7a1), cfg.degrade,
          &fallbacks);

      // The degraded mask is the QC query: condition the sampler on it.
      fingerprint::SlicePack query = pack;
      for (std::size_t i = 0; i < query.slices.size(); ++i)
        query.slices[i].mask = degraded_slices[i];
      const std::vector<MaskGrid2D> pgt_slices = sample_slices(
          model, query, pair.subject_id + "/" + band.tag(), steps, seed);

      const MaskGrid3D candidate =
          aggregate_subject(degraded_slices, pack.meta);
      const MaskGrid3D pgt = aggregate_subject(pgt_slices, pack.meta);
      append_scores(report, pair.subject_id, band.tag(), opt.metric,
                    candidate, pgt, &pair.mask, pair.spacing);
    }
  }
  if (report.pairs.empty())
    throw PrerequisiteError("evaluation split matched no subjects");

  report.summarize();
  report.extra["degrade_fallback_slices"] = fallbacks;
  report.extra["sample_steps"] = steps;

  // Per-band absolute-error breakdown for the primary metric.
  for (const degrade::QualityBand& band : degrade::five_bands()) {
    double err = 0.0;
    int n = 0;
    for (const auto& p : report.pairs) {
      if (p.metric != "dsc" || p.tag != band.tag() || !p.real_available)
        continue;
      err += std::abs(p.pseudo_score - p.real_score);
      ++n;
    }
    if (n > 0) report.extra["mae_dsc_band_" + band.tag()] = err / n;
  }
  write_report(report, paths, opt.out_prefix, "evaluate");
  return report;
}

metrics::QCReport cmd_rank(const config::RunConfig& cfg,
                           const EvaluateOptions& opt) {
  check_metric(opt.metric);
  const int steps = opt.steps > 0 ? opt.steps : cfg.ldm.sample_steps;
  const std::uint64_t seed = opt.seed ? opt.seed : cfg.seed;
  const Paths paths = Paths::derive(cfg);
  require_file(paths.split(), "subject split");
  const LoadedModel model = load_model(cfg, opt.force);
  const SubjectSplit split = SubjectSplit::load(paths.split());
  const auto dataset = phantom::load_dataset(cfg.dataset_dir);
  const std::set<std::string> eval_ids(split.eval.begin(), split.eval.end());

  // Three synthetic segmentation "models" of known quality ordering.
  struct SyntheticModel {
    std::string name;
    const degrade::QualityBand* band;  // nullptr: emit GT copies
  };
  const degrade::QualityBand light = degrade::band_from_tag("0.75-0.95");
  const degrade::QualityBand heavy = degrade::band_from_tag("0.10-0.25");
  const std::vector<SyntheticModel> models = {
      {"copy", nullptr}, {"light", &light}, {"heavy", &heavy}};

  metrics::QCReport report;
  std::map<std::string, std::vector<double>> pseudo_scores, real_scores;
  int fallbacks = 0;
  for (const auto& pair : dataset) {
    if (!eval_ids.count(pair.subject_id)) continue;
    const fingerprint::SlicePack pack =
        fingerprint::preprocess(pair, model.fp);

    for (const SyntheticModel& sm : models) {
      std::vector<MaskGrid2D> candidate_slices;
      if (sm.band == nullptr) {
        for (const auto& s : pack.slices) candidate_slices.push_back(s.mask);
      } else {
        candidate_slices =
            degrade_pack(pack, *sm.band, pair.subject_id + "#" + sm.name,
                         mix64(seed, 0x7a2c), cfg.degrade, &fallbacks);
      }

      fingerprint::SlicePack query = pack;
      for (std::size_t i = 0; i < query.slices.size(); ++i)
        query.slices[i].mask = candidate_slices[i];
      const std::vector<MaskGrid2D> pgt_slices = sample_slices(
          model, query, pair.subject_id + "#" + sm.name, steps, seed);

      const MaskGrid3D candidate =
          aggregate_subject(candidate_slices, pack.meta);
      const MaskGrid3D pgt = aggregate_subject(pgt_slices, pack.meta);
      append_scores(report, pair.subject_id, sm.name, opt.metric, candidate,
                    pgt, &pair.mask, pair.spacing);
      pseudo_scores[sm.name].push_back(metrics::dsc(candidate, pgt));
      real_scores[sm.name].push_back(metrics::dsc(candidate, pair.mask));
    }
  }
  if (report.pairs.empty())
    throw PrerequisiteError("evaluation split matched no subjects");

  const metrics::ModelRanking ranking =
      metrics::rank_models(pseudo_scores, real_scores);
  report.summarize();
  report.kendall = ranking.tau;
  report.extra["degrade_fallback_slices"] = fallbacks;
  for (const auto& [name, rank] : ranking.pseudo_rank)
    report.extra["pseudo_rank_" + name] = rank;
  for (const auto& [name, rank] : ranking.real_rank)
    report.extra["real_rank_" + name] = rank;

  std::cerr << "pseudo order:";
  for (const auto& name : ranking.pseudo_order) std::cerr << " " << name;
  std::cerr << " | real order:";
  for (const auto& name : ranking.real_order) std::cerr << " " << name;
  std::cerr << " | tau " << ranking.tau << "\n";

  write_report(report, paths, opt.out_prefix, "rank");
  return report;
}

}  // namespace nnqc::pipeline
