#include "villa/pipeline.hpp"

#include <cstdio>
#include <iomanip>
#include <sstream>

namespace villa {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw Error(ErrorKind::InvalidArgument, "'" + key + "' expects a number, got '" + v + "'");
}

long to_long(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long x = std::stol(v, &used, 0);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw Error(ErrorKind::InvalidArgument, "'" + key + "' expects an integer, got '" + v + "'");
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const auto x = std::stoull(v, &used, 0);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw Error(ErrorKind::InvalidArgument, "'" + key + "' expects an unsigned integer, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw Error(ErrorKind::InvalidArgument, "'" + key + "' expects a boolean, got '" + v + "'");
}

std::string digits_string(const DigitSource& src) {
  if (const auto* m = std::get_if<MnistIdx>(&src)) return "mnist:" + m->images.string() + "," + m->labels.string();
  return "synthetic";
}

DigitSource digits_from(const std::string& v) {
  if (v == "synthetic") return SyntheticGlyphs{};
  if (v.rfind("mnist:", 0) == 0) {
    const auto rest = v.substr(6);
    const auto comma = rest.find(',');
    if (comma == std::string::npos) throw Error(ErrorKind::InvalidArgument, "digits=mnist:<images>,<labels>");
    return MnistIdx{rest.substr(0, comma), rest.substr(comma + 1)};
  }
  throw Error(ErrorKind::InvalidArgument, "digits must be 'synthetic' or 'mnist:<images>,<labels>'");
}

std::string optimizer_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind optimizer_from(const std::string& key, const std::string& v) {
  if (v == "adam") return OptimizerKind::Adam;
  if (v == "sgd") return OptimizerKind::Sgd;
  throw Error(ErrorKind::InvalidArgument, "'" + key + "' must be adam or sgd");
}

std::string list_string(const std::vector<double>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + num(xs[i]);
  return out;
}

std::string hash_of(const std::string& text) { return hex64(fnv1a(text)); }

void check_hash(const std::string& what, const std::string& found, const std::string& expected) {
  if (found != expected) {
    throw Error(ErrorKind::ConfigHashMismatch, what + " was produced with config " + found + ", current config expects " +
                                                   expected + "; rerun the upstream command");
  }
}

void require(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p)) throw Error(ErrorKind::MissingArtifact, p.string() + " not found; run '" + producer + "' first");
}

std::string read_dataset_hash(const fs::path& dir) {
  require(dir / "dataset.json", "generate");
  return nlohmann::json::parse(read_file(dir / "dataset.json")).value("config_hash", "");
}

GenConfig test_gen(const RunConfig& cfg) {
  GenConfig g = cfg.gen;
  g.seed = cfg.test_seed;
  return g;
}

std::string csv_curve(const std::vector<double>& curve) { return loss_curve_csv(curve); }

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = {
      "c",          "b",          "seed",        "digits",     "test_images", "test_seed",   "d",
      "token_seed", "map_lr",     "map_batch",   "map_epochs", "map_seed",    "map_optimizer", "p",
      "tau",        "adapter_alpha", "normalize", "epsilon",   "assign_mode", "zs_epsilon",  "vlm_lr",
      "vlm_batch",  "vlm_epochs", "vlm_patience", "vlm_seed",  "vlm_tau",     "vlm_mask",    "random_seed",
      "seeds",      "sweep_c",    "sweep_variant"};
  return k;
}

std::map<std::string, std::string> RunConfig::to_map() const {
  return {{"c", num(gen.c)},
          {"b", std::to_string(gen.b)},
          {"seed", std::to_string(gen.seed)},
          {"digits", digits_string(gen.digit_source)},
          {"test_images", std::to_string(test_images)},
          {"test_seed", std::to_string(test_seed)},
          {"d", std::to_string(enc.d)},
          {"token_seed", std::to_string(enc.token_seed)},
          {"map_lr", num(map_train.lr)},
          {"map_batch", std::to_string(map_train.batch_size)},
          {"map_epochs", std::to_string(map_train.epochs)},
          {"map_seed", std::to_string(map_train.seed)},
          {"map_optimizer", optimizer_string(map_train.optimizer)},
          {"p", std::to_string(map.p)},
          {"tau", num(map.tau)},
          {"adapter_alpha", num(map.adapter_alpha)},
          {"normalize", map.normalize ? "true" : "false"},
          {"epsilon", num(assign.epsilon)},
          {"assign_mode", assign.mode == AssignMode::AttrToRegions ? "attr_to_regions" : "region_argmax"},
          {"zs_epsilon", num(zs_epsilon)},
          {"vlm_lr", num(vlm.train.lr)},
          {"vlm_batch", std::to_string(vlm.train.batch_size)},
          {"vlm_epochs", std::to_string(vlm.train.epochs)},
          {"vlm_patience", std::to_string(vlm.patience)},
          {"vlm_seed", std::to_string(vlm.train.seed)},
          {"vlm_tau", num(vlm.tau)},
          {"vlm_mask", vlm.mask_same_image ? "true" : "false"},
          {"random_seed", std::to_string(random_seed)},
          {"seeds", std::to_string(seeds)},
          {"sweep_c", list_string(sweep_c)},
          {"sweep_variant", sweep_variant}};
}

void RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "c") gen.c = to_double(key, v);
  else if (key == "b") gen.b = to_long(key, v);
  else if (key == "seed") gen.seed = to_u64(key, v);
  else if (key == "digits") gen.digit_source = digits_from(v);
  else if (key == "test_images") test_images = static_cast<std::size_t>(to_u64(key, v));
  else if (key == "test_seed") test_seed = to_u64(key, v);
  else if (key == "d") enc.d = static_cast<int>(to_long(key, v));
  else if (key == "token_seed") enc.token_seed = to_u64(key, v);
  else if (key == "map_lr") map_train.lr = to_double(key, v);
  else if (key == "map_batch") map_train.batch_size = static_cast<int>(to_long(key, v));
  else if (key == "map_epochs") map_train.epochs = static_cast<int>(to_long(key, v));
  else if (key == "map_seed") map_train.seed = to_u64(key, v);
  else if (key == "map_optimizer") map_train.optimizer = optimizer_from(key, v);
  else if (key == "p") map.p = static_cast<int>(to_long(key, v));
  else if (key == "tau") map.tau = to_double(key, v);
  else if (key == "adapter_alpha") map.adapter_alpha = to_double(key, v);
  else if (key == "normalize") map.normalize = to_bool(key, v);
  else if (key == "epsilon") assign.epsilon = to_double(key, v);
  else if (key == "assign_mode") {
    if (v == "attr_to_regions") assign.mode = AssignMode::AttrToRegions;
    else if (v == "region_argmax") assign.mode = AssignMode::RegionToArgmaxAttr;
    else throw Error(ErrorKind::InvalidArgument, "assign_mode must be attr_to_regions or region_argmax");
  } else if (key == "zs_epsilon") zs_epsilon = to_double(key, v);
  else if (key == "vlm_lr") vlm.train.lr = to_double(key, v);
  else if (key == "vlm_batch") vlm.train.batch_size = static_cast<int>(to_long(key, v));
  else if (key == "vlm_epochs") vlm.train.epochs = static_cast<int>(to_long(key, v));
  else if (key == "vlm_patience") vlm.patience = static_cast<int>(to_long(key, v));
  else if (key == "vlm_seed") vlm.train.seed = to_u64(key, v);
  else if (key == "vlm_tau") vlm.tau = to_double(key, v);
  else if (key == "vlm_mask") vlm.mask_same_image = to_bool(key, v);
  else if (key == "random_seed") random_seed = to_u64(key, v);
  else if (key == "seeds") seeds = static_cast<int>(to_long(key, v));
  else if (key == "sweep_c") {
    sweep_c.clear();
    std::istringstream in(v);
    std::string item;
    while (std::getline(in, item, ',')) sweep_c.push_back(to_double(key, trim(item)));
  } else if (key == "sweep_variant") {
    vlm_variant_from_string(v);
    sweep_variant = v;
  } else {
    throw Error(ErrorKind::InvalidArgument, "unknown config key '" + key + "'");
  }
}

std::string RunConfig::serialize() const {
  const auto m = to_map();
  std::string out;
  for (const auto& k : keys()) out += k + " = " + m.at(k) + "\n";
  return out;
}

RunConfig RunConfig::parse(const std::string& text) { return parse(text, RunConfig{}); }

RunConfig RunConfig::parse(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::InvalidArgument, "config line " + std::to_string(lineno) + ": expected key = value");
    }
    base.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

std::string RunConfig::data_hash() const {
  const auto m = to_map();
  std::string s = "data";
  for (const char* k : {"c", "b", "seed", "digits", "test_images", "test_seed"}) s += ";" + std::string(k) + "=" + m.at(k);
  return hash_of(s);
}

std::string RunConfig::mapping_hash() const {
  return hash_of(data_hash() + ";" + enc.describe() + ";" + map_train.describe() + ";" + map.describe());
}

std::string RunConfig::assign_hash() const {
  const auto m = to_map();
  return hash_of(mapping_hash() + ";eps=" + m.at("epsilon") + ";mode=" + m.at("assign_mode") +
                 ";zs_eps=" + m.at("zs_epsilon"));
}

std::string RunConfig::vlm_hash(VlmVariant v) const {
  const bool needs_pairs = v == VlmVariant::ZsMap || v == VlmVariant::Villa;
  return hash_of((needs_pairs ? assign_hash() : data_hash()) + ";" + enc.describe() + ";" + vlm.describe() +
                 ";variant=" + to_string(v));
}

std::string RunConfig::eval_hash() const {
  std::string s = assign_hash() + ";random_seed=" + std::to_string(random_seed);
  for (auto v : kAllVariants) s += ";" + vlm_hash(v);
  return hash_of(s);
}

void init_run(const RunPaths& run, const RunConfig& cfg) {
  fs::create_directories(run.root);
  write_file_atomic(run.config(), cfg.serialize());
}

RunConfig load_run_config(const RunPaths& run) {
  require(run.config(), "generate");
  return RunConfig::parse(read_file(run.config()));
}

void stage_generate(const RunPaths& run, const RunConfig& cfg, int threads) {
  cfg.gen.validate();
  const auto pool = load_pool(cfg.gen.digit_source);
  const auto catalog = AttributeCatalog::docmnist();
  const auto train = generate_dataset(cfg.gen, catalog, pool, threads);
  const auto test = generate_fixed(test_gen(cfg), cfg.test_images, catalog, pool, threads);
  save_dataset(train, run.train(), cfg.data_hash());
  save_dataset(test, run.test(), cfg.data_hash());
}

void stage_train_map(const RunPaths& run, const RunConfig& cfg, int threads) {
  check_hash("train/", read_dataset_hash(run.train()), cfg.data_hash());
  const auto train = load_dataset(run.train());
  const auto result = train_mapping(train, cfg.enc, cfg.map_train, cfg.map, threads);
  save_checkpoint(to_checkpoint(result.params, {{"config_hash", cfg.mapping_hash()}}), run.mapping());
  write_file_atomic(run.mapping_loss(), csv_curve(result.loss_curve));
}

void stage_assign(const RunPaths& run, const RunConfig& cfg, int threads) {
  require(run.mapping(), "train-map");
  const auto ckpt = load_checkpoint(run.mapping());
  check_hash("mapping.ckpt", ckpt.get("config_hash"), cfg.mapping_hash());
  const auto params = mapping_from_checkpoint(ckpt);
  if (params.encoder_hash != cfg.enc.hash()) throw Error(ErrorKind::EncoderMismatch, "mapping encoder differs");
  check_hash("train/", read_dataset_hash(run.train()), cfg.data_hash());
  const auto train = load_dataset(run.train());
  const auto pre = precompute(train, cfg.enc, threads);

  const auto villa_pairs = expand_dataset(train, pre, params, cfg.assign, threads);
  const auto zs = zero_shot_mapping(train.catalog.size(), cfg.enc.d, cfg.enc.hash());
  const auto zs_pairs = expand_dataset(train, pre, zs, {cfg.zs_epsilon, AssignMode::AttrToRegions}, threads);
  const auto random_pairs = random_mapping_baseline(train, cfg.random_seed);

  write_file_atomic(run.pairs("villa"), pairs_to_jsonl(villa_pairs));
  write_file_atomic(run.pairs("zs"), pairs_to_jsonl(zs_pairs));
  write_file_atomic(run.pairs("random"), pairs_to_jsonl(random_pairs));
  write_file_atomic(run.augmented("villa"),
                    augmented_to_jsonl(augment_dataset(train, villa_pairs, PairSource::TrainedMapping)));
  write_file_atomic(run.augmented("zs"), augmented_to_jsonl(augment_dataset(train, zs_pairs, PairSource::ZeroShotMapping)));
  write_file_atomic(run.assign_meta(), nlohmann::json{{"config_hash", cfg.assign_hash()},
                                                       {"villa_pairs", villa_pairs.size()},
                                                       {"zs_pairs", zs_pairs.size()},
                                                       {"random_pairs", random_pairs.size()}}
                                               .dump(2) + "\n");
}

void stage_train_vlm(const RunPaths& run, const RunConfig& cfg, const std::vector<VlmVariant>& variants, int threads) {
  check_hash("train/", read_dataset_hash(run.train()), cfg.data_hash());
  const auto train = load_dataset(run.train());
  for (auto v : variants) {
    AugmentedDataset aug;
    const AugmentedDataset* aug_ptr = nullptr;
    if (v == VlmVariant::ZsMap || v == VlmVariant::Villa) {
      require(run.assign_meta(), "assign");
      check_hash("assign.json", nlohmann::json::parse(read_file(run.assign_meta())).value("config_hash", ""),
                 cfg.assign_hash());
      const auto path = run.augmented(v == VlmVariant::Villa ? "villa" : "zs");
      require(path, "assign");
      aug = augmented_from_jsonl(read_file(path));
      aug_ptr = &aug;
    }
    const auto result = train_vlm(train, aug_ptr, v, cfg.vlm, cfg.enc, threads);
    save_checkpoint(to_checkpoint(result.params, {{"config_hash", cfg.vlm_hash(v)}}), run.vlm(v));
    write_file_atomic(run.vlm_loss(v), csv_curve(result.loss_curve));
  }
}

MetricsReport stage_evaluate(const RunPaths& run, const RunConfig& cfg, const std::vector<VlmVariant>& variants,
                             int threads) {
  for (auto v : variants) require(run.vlm(v), "train-vlm --variant " + std::string(to_string(v)));
  check_hash("test/", read_dataset_hash(run.test()), cfg.data_hash());
  const auto test = load_dataset(run.test());

  MetricsReport report;
  report.config_hash = cfg.eval_hash();
  report.c = cfg.gen.c;
  for (auto v : variants) {
    const auto ckpt = load_checkpoint(run.vlm(v));
    check_hash(run.vlm(v).filename().string(), ckpt.get("config_hash"), cfg.vlm_hash(v));
    const auto params = vlm_from_checkpoint(ckpt);
    report.variants.emplace_back(to_string(v), evaluate_retrieval(test, params, cfg.enc, threads));
  }

  if (fs::exists(run.assign_meta())) {
    check_hash("assign.json", nlohmann::json::parse(read_file(run.assign_meta())).value("config_hash", ""),
               cfg.assign_hash());
    const auto train = load_dataset(run.train());
    const auto gt = ground_truth_pairs(train);
    for (const auto& [label, file] : {std::pair{"random", "random"}, {"vlm_zs", "zs"}, {"villa", "villa"}}) {
      const auto pairs = pairs_from_jsonl(read_file(run.pairs(file)));
      report.mappings.emplace_back(label, mapping_quality(keys_of(pairs), gt));
    }
  }

  write_file_atomic(run.metrics_csv(), report.to_csv());
  write_file_atomic(run.metrics_json(), report.to_json().dump(2) + "\n");
  return report;
}

RetrievalMetrics run_variant(const RunConfig& cfg, VlmVariant variant, int threads) {
  const auto pool = load_pool(cfg.gen.digit_source);
  const auto catalog = AttributeCatalog::docmnist();
  const auto train = generate_dataset(cfg.gen, catalog, pool, threads);
  const auto test = generate_fixed(test_gen(cfg), cfg.test_images, catalog, pool, threads);

  AugmentedDataset aug;
  const AugmentedDataset* aug_ptr = nullptr;
  if (variant == VlmVariant::ZsMap || variant == VlmVariant::Villa) {
    const auto pre = precompute(train, cfg.enc, threads);
    std::vector<RegionAttributePair> pairs;
    if (variant == VlmVariant::Villa) {
      const auto mapped = train_mapping(pre,
                                        init_mapping(catalog.size(), cfg.enc.d, cfg.map, cfg.map_train.seed, cfg.enc.hash()),
                                        cfg.map_train, threads);
      pairs = expand_dataset(train, pre, mapped.params, cfg.assign, threads);
      aug = augment_dataset(train, pairs, PairSource::TrainedMapping);
    } else {
      pairs = expand_dataset(train, pre, zero_shot_mapping(catalog.size(), cfg.enc.d, cfg.enc.hash()),
                             {cfg.zs_epsilon, AssignMode::AttrToRegions}, threads);
      aug = augment_dataset(train, pairs, PairSource::ZeroShotMapping);
    }
    aug_ptr = &aug;
  }
  const auto result = train_vlm(train, aug_ptr, variant, cfg.vlm, cfg.enc, threads);
  return evaluate_retrieval(test, result.params, cfg.enc, threads);
}

std::vector<SweepRow> sweep_complexity(const RunConfig& cfg, const std::vector<double>& cs, VlmVariant variant,
                                       int threads) {
  if (cs.size() < 2) throw Error(ErrorKind::InvalidArgument, "a sweep needs at least two c values");
  if (cfg.seeds < 1) throw Error(ErrorKind::InvalidArgument, "seeds must be >= 1");
  std::vector<SweepRow> rows;
  for (double c : cs) {
    SweepRow row{c, 0.0, 0.0};
    for (int s = 0; s < cfg.seeds; ++s) {
      RunConfig run = cfg;
      run.gen.c = c;
      run.gen.seed = cfg.gen.seed + static_cast<std::uint64_t>(s);
      run.test_seed = cfg.test_seed + static_cast<std::uint64_t>(s);
      run.map_train.seed = cfg.map_train.seed + static_cast<std::uint64_t>(s);
      run.vlm.train.seed = cfg.vlm.train.seed + static_cast<std::uint64_t>(s);
      const auto m = run_variant(run, variant, threads);
      row.t2r_rprec += m.t2r_rprec_mean() / cfg.seeds;
      row.r2t_rprec += m.r2t_rprec / cfg.seeds;
    }
    rows.push_back(row);
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "c,t2r_rprec,r2t_rprec\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f\n", r.c, r.t2r_rprec, r.r2t_rprec);
    out += buf;
  }
  return out;
}

std::vector<SweepRow> sweep_from_csv(const std::string& text) {
  std::vector<SweepRow> rows;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    SweepRow r;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &r.c, &r.t2r_rprec, &r.r2t_rprec) != 3) {
      throw Error(ErrorKind::InvalidArgument, "malformed sweep row '" + line + "'");
    }
    rows.push_back(r);
  }
  return rows;
}

std::string render_report(const MetricsReport& report, const std::vector<SweepRow>& sweep) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(1);
  out << "run " << report.config_hash << "  c=" << report.c << "\n\n";
  if (!report.variants.empty()) {
    out << std::left << std::setw(12) << "variant" << std::right << std::setw(10) << "t2r R-P" << std::setw(10)
        << "t2r P@25" << std::setw(10) << "t2r P@100" << std::setw(10) << "r2t R-P" << "\n";
    const auto cell = [&](const std::optional<double>& v) {
      if (v) out << std::setw(10) << 100.0 * *v;
      else out << std::setw(10) << "-";
    };
    for (const auto& [name, m] : report.variants) {
      out << std::left << std::setw(12) << name << std::right;
      cell(m.t2r_rprec_mean());
      cell(m.p25_mean());
      cell(m.p100_mean());
      cell(m.r2t_rprec);
      out << "\n";
    }
    out << "\n";
  }
  if (!report.mappings.empty()) {
    out << std::left << std::setw(12) << "mapping" << std::right << std::setw(10) << "precision" << std::setw(10)
        << "recall" << std::setw(10) << "F1" << "\n";
    for (const auto& [name, q] : report.mappings) {
      out << std::left << std::setw(12) << name << std::right << std::setw(10) << 100.0 * q.precision << std::setw(10)
          << 100.0 * q.recall << std::setw(10) << 100.0 * q.f1 << "\n";
    }
    out << "\n";
  }
  if (!sweep.empty()) {
    out << "complexity sweep\n" << std::setw(8) << "c" << std::setw(10) << "t2r R-P" << std::setw(10) << "r2t R-P"
        << "\n";
    for (const auto& r : sweep)
      out << std::setw(8) << r.c << std::setw(10) << 100.0 * r.t2r_rprec << std::setw(10) << 100.0 * r.r2t_rprec << "\n";
  }
  return out.str();
}

std::string stage_report(const RunPaths& run) {
  require(run.metrics_json(), "evaluate");
  const auto report = MetricsReport::from_json(nlohmann::json::parse(read_file(run.metrics_json())));
  std::vector<SweepRow> sweep;
  if (fs::exists(run.sweep_csv())) sweep = sweep_from_csv(read_file(run.sweep_csv()));
  const auto text = render_report(report, sweep);
  write_file_atomic(run.report(), text);
  return text;
}

}  // namespace villa
