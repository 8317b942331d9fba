// bayeseg: generative joint segmentation of tumors and normal head
// structures. Subcommands: train-crbm, segment, phantom, eval,
// grid-search-beta.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "bayeseg/atlas.hpp"
#include "bayeseg/crbm.hpp"
#include "bayeseg/errors.hpp"
#include "bayeseg/gem.hpp"
#include "bayeseg/metrics.hpp"
#include "bayeseg/mrf.hpp"
#include "bayeseg/nifti.hpp"
#include "bayeseg/parallel.hpp"
#include "bayeseg/phantom.hpp"
#include "bayeseg/qp.hpp"
#include "bayeseg/sampler.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bayeseg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitNumerical = 1;
constexpr int kExitBadInput = 2;

struct SegmentOptions {
  std::vector<Channel> channel_specs;  // values filled later
  std::vector<std::string> channel_files;
  std::string atlas_manifest;
  double epsilon_unspecified = 0.0;
  bool apply_log = false;
  double intensity_floor = 1e-4;
  std::string crbm_z, crbm_y;
  std::string prior = "crbm";
  MrfConfig mrf;
  SimplifiedPriorConfig simplified;
  GemConfig gem;
  ChainConfig chain;
  int bias_per_axis = 4;
  std::uint64_t seed = 1;
  int threads = 0;
  std::string output = "out";
  json echo;
};

SegmentOptions parse_segment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  json cfg;
  try {
    in >> cfg;
  } catch (const json::exception& e) {
    throw IoError("config parse error: " + std::string(e.what()));
  }
  SegmentOptions opt;
  opt.echo = cfg;
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    return fs::path(p).is_absolute() ? p : (base / p).string();
  };

  for (const auto& ch : cfg.at("channels")) {
    Channel c;
    c.tag = ch.at("tag").get<std::string>();
    c.modality = resolve_modality(c.tag);
    c.bias_field = ch.value("bias_field", c.modality != Modality::Ct);
    opt.channel_specs.push_back(c);
    opt.channel_files.push_back(resolve(ch.at("file").get<std::string>()));
  }
  opt.atlas_manifest = resolve(cfg.at("atlas").get<std::string>());
  opt.epsilon_unspecified = cfg.value("epsilon_unspecified", 0.0);
  opt.apply_log = cfg.value("log_transform", false);
  opt.intensity_floor = cfg.value("intensity_floor", 1e-4);
  if (cfg.contains("crbm_z")) {
    opt.crbm_z = resolve(cfg.at("crbm_z").get<std::string>());
  }
  if (cfg.contains("crbm_y")) {
    opt.crbm_y = resolve(cfg.at("crbm_y").get<std::string>());
  }
  opt.prior = cfg.value("prior", std::string("crbm"));
  if (cfg.contains("mrf")) {
    opt.mrf.beta_z = cfg["mrf"].value("beta_z", 4.0);
    opt.mrf.beta_y = cfg["mrf"].value("beta_y", 1.0);
  }
  if (cfg.contains("simplified")) {
    opt.simplified.tumor_fraction = cfg["simplified"].value("w", 0.1);
    opt.simplified.core_fraction = cfg["simplified"].value("u", 0.5);
  }
  if (cfg.contains("gem")) {
    opt.gem.max_iter = cfg["gem"].value("max_iter", 100);
    opt.gem.rel_tol = cfg["gem"].value("rel_tol", 1e-6);
  }
  if (cfg.contains("flip")) {
    opt.gem.flip_fraction = cfg["flip"].value("fraction", 0.2);
  }
  if (cfg.contains("chain")) {
    opt.chain.burn_in = cfg["chain"].value("burn_in", 200);
    opt.chain.samples = cfg["chain"].value("samples", 50);
  }
  if (cfg.contains("bias")) {
    opt.bias_per_axis = cfg["bias"].value("per_axis", 4);
  }
  opt.seed = cfg.value("seed", 1ull);
  opt.threads = cfg.value("threads", 0);
  opt.output = cfg.value("output", std::string("out"));
  return opt;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

std::vector<std::string> sorted_mask_files(const std::string& dir) {
  if (!fs::is_directory(dir)) {
    throw IoError("not a directory: " + dir);
  }
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.ends_with(".nii") || name.ends_with(".nii.gz")) {
      files.push_back(entry.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

int cmd_train_crbm(const std::string& corpus_dir, const std::string& out_path,
                   CrbmConfig cfg, const std::string& heldout_path,
                   bool augment) {
  const auto files = sorted_mask_files(corpus_dir);
  if (files.empty()) {
    std::cerr << "train-crbm: no .nii masks in " << corpus_dir << "\n";
    return kExitBadInput;
  }
  std::vector<BinaryMap> corpus;
  for (const auto& f : files) {
    NiftiVolume v = read_nifti(f);
    BinaryMap m(v.shape);
    for (std::size_t i = 0; i < v.data.size(); ++i) {
      m.set(i, v.data[i] != 0.0);
    }
    if (augment) {
      for (auto& flip : flip_augment(m)) corpus.push_back(std::move(flip));
    } else {
      corpus.push_back(std::move(m));
    }
  }
  std::cout << "training on " << corpus.size() << " masks ("
            << files.size() << " files" << (augment ? ", 8 flips each" : "")
            << ")\n";
  BinaryMap heldout;
  const BinaryMap* heldout_ptr = nullptr;
  if (!heldout_path.empty()) {
    NiftiVolume v = read_nifti(heldout_path);
    heldout = BinaryMap(v.shape);
    for (std::size_t i = 0; i < v.data.size(); ++i) {
      heldout.set(i, v.data[i] != 0.0);
    }
    heldout_ptr = &heldout;
  }
  std::vector<TrainLogEntry> log;
  const CrbmParams params = train_crbm(corpus, cfg, heldout_ptr, &log);
  save_crbm(out_path, params, cfg);
  std::string log_text = "step,heldout_free_energy,batch_free_energy\n";
  for (const auto& e : log) {
    log_text += std::to_string(e.step) + "," +
                std::to_string(e.heldout_free_energy) + "," +
                std::to_string(e.batch_free_energy) + "\n";
  }
  write_text(out_path + ".train.csv", log_text);
  std::cout << "wrote " << out_path << "\n";
  return kExitOk;
}

int cmd_segment(SegmentOptions opt) {
  if (opt.threads > 0) set_thread_count(opt.threads);

  // --- data
  MultiChannelImage image;
  GridShape shape;
  Spacing spacing;
  for (std::size_t c = 0; c < opt.channel_files.size(); ++c) {
    NiftiVolume v = read_nifti(opt.channel_files[c]);
    if (c == 0) {
      shape = v.shape;
      spacing = v.spacing;
      image = MultiChannelImage(shape, spacing);
    } else if (v.shape != shape) {
      throw IoError(opt.channel_files[c] + ": channel shape mismatch");
    }
    Channel ch = opt.channel_specs[c];
    ch.values = Volume<double>(v.shape, std::move(v.data));
    image.add_channel(std::move(ch));
  }
  if (opt.apply_log) {
    image = log_transform(image, opt.intensity_floor);
  }

  // --- atlas
  AtlasPrior atlas = load_atlas(opt.atlas_manifest, shape);
  if (opt.epsilon_unspecified > 0.0) {
    atlas = add_unspecified_tissue(atlas, opt.epsilon_unspecified);
  }

  // --- model pieces
  GmmMapping mapping;
  const ComponentLayout layout = ComponentLayout::from(mapping);
  const BiasBasis basis = build_dct_basis(shape, opt.bias_per_axis);
  const HyperPriors hyper =
      build_hyperpriors(image, atlas, mapping, layout,
                        opt.simplified.tumor_fraction,
                        opt.simplified.core_fraction);

  TumorPrior prior;
  CrbmParams crbm_z, crbm_y;
  if (opt.prior == "crbm") {
    if (opt.crbm_z.empty() || opt.crbm_y.empty()) {
      throw IoError("segment: cRBM prior needs crbm_z and crbm_y checkpoints");
    }
    crbm_z = load_crbm(opt.crbm_z);
    crbm_y = load_crbm(opt.crbm_y);
    prior = TumorPrior::crbm(crbm_z, crbm_y);
  } else if (opt.prior == "mrf") {
    prior = TumorPrior::first_order_mrf(opt.mrf);
  } else {
    throw IoError("segment: unknown prior '" + opt.prior + "'");
  }

  fs::create_directories(opt.output);
  write_text(fs::path(opt.output) / "config_echo.json",
             opt.echo.dump(2) + "\n");

  // --- initialization (simplified model) and sampling
  opt.gem.seed = opt.seed;
  opt.chain.seed = opt.seed;
  std::cout << "running GEM initialization...\n";
  const GemResult gem = run_gem(image, atlas, mapping, hyper, &basis,
                                opt.simplified, opt.gem);
  std::cout << "GEM: " << gem.iterations << " iterations, log posterior "
            << gem.trace.back() << "\n";
  std::cout << "running the Gibbs chain (" << opt.chain.burn_in << " + "
            << opt.chain.samples << " sweeps)...\n";
  const ChainResult chain =
      run_chain(image, atlas, mapping, hyper, &basis, prior, gem.theta,
                gem.initial_state, opt.chain);

  // --- outputs
  const JointLabelState& final_state = chain.final_state;
  write_nifti_u8((fs::path(opt.output) / "labels.nii.gz").string(), shape,
                 spacing, final_state.labels().data());
  {
    json codes;
    const auto& table = default_label_table();
    for (int l = 0; l < kNumLabels; ++l) {
      codes[std::to_string(l)] = table.names[l];
    }
    write_text(fs::path(opt.output) / "labels.json", codes.dump(2) + "\n");
  }
  write_nifti_u8((fs::path(opt.output) / "tumor.nii.gz").string(), shape,
                 spacing, final_state.tumor_map().raw().data());
  write_nifti_u8((fs::path(opt.output) / "core.nii.gz").string(), shape,
                 spacing, final_state.core_map().raw().data());

  const double inv = 1.0 / chain.accumulator.count;
  std::vector<double> frac(shape.voxels());
  for (std::size_t i = 0; i < shape.voxels(); ++i) {
    frac[i] = chain.accumulator.tumor_votes[i] * inv;
  }
  write_nifti_f32((fs::path(opt.output) / "vote_tumor.nii.gz").string(),
                  shape, spacing, frac);
  for (std::size_t i = 0; i < shape.voxels(); ++i) {
    frac[i] = chain.accumulator.core_votes[i] * inv;
  }
  write_nifti_f32((fs::path(opt.output) / "vote_core.nii.gz").string(), shape,
                  spacing, frac);
  for (std::size_t i = 0; i < shape.voxels(); ++i) {
    frac[i] = chain.accumulator.label_votes[i * kNumLabels +
                                            final_state.label(i)] * inv;
  }
  write_nifti_f32((fs::path(opt.output) / "vote_label.nii.gz").string(),
                  shape, spacing, frac);

  std::string csv = "sweep,surrogate";
  for (int l = 0; l < kNumLabels; ++l) csv += ",label" + std::to_string(l);
  csv += ",tumor,core\n";
  for (const auto& row : chain.diagnostics) {
    csv += std::to_string(row.sweep) + "," + std::to_string(row.surrogate);
    for (int l = 0; l < kNumLabels; ++l) {
      csv += "," + std::to_string(row.label_counts[l]);
    }
    csv += "," + std::to_string(row.tumor_count) + "," +
           std::to_string(row.core_count) + "\n";
  }
  write_text(fs::path(opt.output) / "chain.csv", csv);

  std::string trace = "iteration,log_posterior\n";
  for (std::size_t k = 0; k < gem.trace.size(); ++k) {
    trace += std::to_string(k + 1) + "," + std::to_string(gem.trace[k]) + "\n";
  }
  write_text(fs::path(opt.output) / "gem_trace.csv", trace);

  std::vector<std::string> tags;
  for (const auto& c : image.channels()) tags.push_back(c.tag);
  save_theta((fs::path(opt.output) / "theta.bin").string(), chain.theta_last,
             tags);
  std::cout << "wrote segmentation to " << opt.output << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& pred_dir, const std::string& truth_dir,
             std::vector<std::string> structures, const std::string& out) {
  // truth: a phantom bundle; prediction: a segment output directory
  const PhantomBundle truth = load_phantom(truth_dir);
  const GridShape& shape = truth.spec.shape;

  NiftiVolume lv = read_nifti((fs::path(pred_dir) / "labels.nii.gz").string());
  if (lv.shape != shape) {
    throw IoError("eval: prediction shape does not match the truth");
  }
  Volume<std::uint8_t> labels(shape);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = static_cast<std::uint8_t>(lv.data[i]);
  }
  BinaryMap z =
      read_binary_map((fs::path(pred_dir) / "tumor.nii.gz").string(), shape);
  BinaryMap y =
      read_binary_map((fs::path(pred_dir) / "core.nii.gz").string(), shape);
  const JointLabelState pred(labels, z, y, default_label_table().brain_mask);

  if (structures.empty()) {
    structures = {"whole_tumor", "core", "edema"};
  }
  const EvalReport report =
      evaluate(pred, truth.truth, structures, truth.spec.spacing);
  std::cout << report.to_csv();
  if (!out.empty()) {
    write_text(out + ".json", report.to_json() + "\n");
    write_text(out + ".csv", report.to_csv());
    std::cout << "wrote " << out << ".json / .csv\n";
  }
  return kExitOk;
}

int cmd_grid_search_beta(const std::vector<std::string>& bundles,
                         double bz_min, double bz_max, double by_min,
                         double by_max, double step, int burn_in, int samples,
                         std::uint64_t seed, const std::string& out) {
  if (bundles.empty()) {
    std::cerr << "grid-search-beta: no phantom bundles given\n";
    return kExitBadInput;
  }
  GmmMapping mapping;
  const ComponentLayout layout = ComponentLayout::from(mapping);

  struct Candidate {
    double bz, by, score;
  };
  std::vector<Candidate> table;
  double best_score = -1.0;
  double best_bz = bz_min, best_by = by_min;

  for (double bz = bz_min; bz <= bz_max + 1e-9; bz += step) {
    for (double by = by_min; by <= by_max + 1e-9; by += step) {
      double score = 0.0;
      int scored = 0;
      for (const auto& dir : bundles) {
        const PhantomBundle bundle = load_phantom(dir);
        const AtlasPrior atlas =
            load_atlas(bundle.atlas_manifest, bundle.spec.shape);
        const HyperPriors hyper =
            build_hyperpriors(bundle.image, atlas, mapping, layout, 0.1, 0.5);
        const BiasBasis basis = build_dct_basis(bundle.spec.shape, 2);
        GemConfig gem_cfg;
        gem_cfg.seed = seed;
        const GemResult gem = run_gem(bundle.image, atlas, mapping, hyper,
                                      &basis, {0.1, 0.5}, gem_cfg);
        ChainConfig chain_cfg;
        chain_cfg.burn_in = burn_in;
        chain_cfg.samples = samples;
        chain_cfg.seed = seed;
        const ChainResult chain = run_chain(
            bundle.image, atlas, mapping, hyper, &basis,
            TumorPrior::first_order_mrf({bz, by}), gem.theta,
            gem.initial_state, chain_cfg);
        const EvalReport report =
            evaluate(chain.final_state, bundle.truth,
                     {"whole_tumor", "core"}, bundle.spec.spacing);
        score += 0.5 * (report.structures[0].dice + report.structures[1].dice);
        ++scored;
      }
      score /= scored;
      table.push_back({bz, by, score});
      std::cout << "beta_z=" << bz << " beta_y=" << by << " score=" << score
                << "\n";
      if (score > best_score + 1e-12) {  // ties keep the smallest pair
        best_score = score;
        best_bz = bz;
        best_by = by;
      }
    }
  }
  std::cout << "best: beta_z=" << best_bz << " beta_y=" << best_by
            << " score=" << best_score << "\n";
  if (!out.empty()) {
    std::string csv = "beta_z,beta_y,score\n";
    for (const auto& c : table) {
      csv += std::to_string(c.bz) + "," + std::to_string(c.by) + "," +
             std::to_string(c.score) + "\n";
    }
    write_text(out, csv);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bayeseg: generative tumor + head-structure segmentation"};
  app.require_subcommand(1);

  // train-crbm
  auto* train = app.add_subcommand("train-crbm",
                                   "train a shape cRBM on binary masks");
  std::string corpus_dir, ckpt_out, heldout;
  CrbmConfig crbm_cfg;
  bool no_augment = false;
  train->add_option("--corpus", corpus_dir, "directory of .nii[.gz] masks")
      ->required();
  train->add_option("--out", ckpt_out, "checkpoint path")->required();
  train->add_option("--filters", crbm_cfg.num_filters);
  train->add_option("--filter-size", crbm_cfg.filter_size);
  train->add_option("--block", crbm_cfg.block_size);
  train->add_option("--steps", crbm_cfg.steps);
  train->add_option("--step-size", crbm_cfg.step_size);
  train->add_option("--minibatch", crbm_cfg.minibatch);
  train->add_option("--seed", crbm_cfg.seed);
  train->add_option("--heldout", heldout, "mask logged each epoch");
  train->add_flag("--no-augment", no_augment, "skip the 8 axis flips");

  // segment
  auto* segment = app.add_subcommand("segment", "segment one subject");
  std::string config_path;
  std::string out_override, prior_override;
  std::uint64_t seed_override = 0;
  int burn_override = -1, samples_override = -1, threads_override = -1;
  double bz_override = -1.0, by_override = -1.0;
  segment->add_option("--config", config_path, "run config JSON")->required();
  segment->add_option("--output", out_override);
  segment->add_option("--prior", prior_override, "crbm or mrf");
  auto* seed_opt = segment->add_option("--seed", seed_override);
  segment->add_option("--burn-in", burn_override);
  segment->add_option("--samples", samples_override);
  segment->add_option("--beta-z", bz_override);
  segment->add_option("--beta-y", by_override);
  segment->add_option("--threads", threads_override);

  // phantom
  auto* phantom = app.add_subcommand("phantom", "generate a synthetic bundle");
  std::string spec_path, phantom_out;
  phantom->add_option("--spec", spec_path, "phantom spec JSON");
  phantom->add_option("--out", phantom_out, "bundle directory")->required();
  std::uint64_t phantom_seed = 1;
  std::vector<int> phantom_shape;
  phantom->add_option("--seed", phantom_seed);
  phantom->add_option("--shape", phantom_shape, "nx ny nz")->expected(3);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "score a segmentation");
  std::string pred_dir, truth_dir, report_out;
  std::vector<std::string> structures;
  eval_cmd->add_option("--pred", pred_dir, "segment output directory")
      ->required();
  eval_cmd->add_option("--truth", truth_dir, "phantom bundle directory")
      ->required();
  eval_cmd->add_option("--structures", structures);
  eval_cmd->add_option("--out", report_out, "report path prefix");

  // grid-search-beta
  auto* grid = app.add_subcommand("grid-search-beta",
                                  "tune the first-order MRF weights");
  std::vector<std::string> bundles;
  double bz_min = 0.0, bz_max = 4.0, by_min = 0.0, by_max = 2.0, gstep = 0.5;
  int gburn = 20, gsamples = 10;
  std::uint64_t gseed = 1;
  std::string grid_out;
  grid->add_option("--bundles", bundles, "phantom bundle directories")
      ->required();
  grid->add_option("--beta-z-min", bz_min);
  grid->add_option("--beta-z-max", bz_max);
  grid->add_option("--beta-y-min", by_min);
  grid->add_option("--beta-y-max", by_max);
  grid->add_option("--step", gstep);
  grid->add_option("--burn-in", gburn);
  grid->add_option("--samples", gsamples);
  grid->add_option("--seed", gseed);
  grid->add_option("--out", grid_out, "table CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      return cmd_train_crbm(corpus_dir, ckpt_out, crbm_cfg, heldout,
                            !no_augment);
    }
    if (*segment) {
      SegmentOptions opt = parse_segment_config(config_path);
      if (!out_override.empty()) opt.output = out_override;
      if (!prior_override.empty()) opt.prior = prior_override;
      if (seed_opt->count()) opt.seed = seed_override;
      if (burn_override >= 0) opt.chain.burn_in = burn_override;
      if (samples_override >= 0) opt.chain.samples = samples_override;
      if (bz_override >= 0.0) opt.mrf.beta_z = bz_override;
      if (by_override >= 0.0) opt.mrf.beta_y = by_override;
      if (threads_override >= 0) opt.threads = threads_override;
      return cmd_segment(std::move(opt));
    }
    if (*phantom) {
      PhantomSpec spec;
      if (!spec_path.empty()) {
        std::ifstream in(spec_path);
        if (!in) throw IoError("cannot open spec " + spec_path);
        std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
        spec = phantom_spec_from_json(text);
      }
      if (phantom->count("--seed")) spec.seed = phantom_seed;
      if (!phantom_shape.empty()) {
        spec.shape =
            GridShape(phantom_shape[0], phantom_shape[1], phantom_shape[2]);
      }
      const Phantom ph = generate_phantom(spec);
      save_phantom(ph, phantom_out);
      std::cout << "wrote phantom bundle to " << phantom_out << " ("
                << ph.truth.tumor_map().count() << " tumor voxels, "
                << ph.truth.core_map().count() << " core)\n";
      return kExitOk;
    }
    if (*eval_cmd) {
      return cmd_eval(pred_dir, truth_dir, structures, report_out);
    }
    if (*grid) {
      return cmd_grid_search_beta(bundles, bz_min, bz_max, by_min, by_max,
                                  gstep, gburn, gsamples, gseed, grid_out);
    }
  } catch (const IoError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitBadInput;
  } catch (const std::invalid_argument& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitBadInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitBadInput;
}
