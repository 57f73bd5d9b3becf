#include "tbad/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <toml.hpp>

#include "tbad/error.hpp"

namespace tbad {

namespace {

class Section {
 public:
  Section(const toml::table* table, std::string name) : table_(table), name_(std::move(name)) {}

  bool present() const { return table_ != nullptr; }

  template <class T>
  std::optional<T> get(const std::string& key) {
    used_.insert(key);
    if (!table_) return std::nullopt;
    const toml::node* node = table_->get(key);
    if (!node) return std::nullopt;
    if constexpr (std::is_same_v<T, double>) {
      if (auto v = node->value<double>()) return *v;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (auto v = node->value<bool>()) return *v;
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (auto v = node->value<std::string>()) return *v;
    } else {
      if (node->is_integer()) return static_cast<T>(*node->value<std::int64_t>());
    }
    fail(ErrorCode::config, "[" + name_ + "] " + key + " has the wrong type");
  }

  template <class T>
  void read(const std::string& key, T& target) {
    if (auto v = get<T>(key)) target = *v;
  }

  std::optional<std::vector<const toml::node*>> array(const std::string& key) {
    used_.insert(key);
    if (!table_) return std::nullopt;
    const toml::node* node = table_->get(key);
    if (!node) return std::nullopt;
    const toml::array* arr = node->as_array();
    require(arr != nullptr, ErrorCode::config, "[" + name_ + "] " + key + " must be an array");
    std::vector<const toml::node*> out;
    for (const auto& e : *arr) out.push_back(&e);
    return out;
  }

  std::optional<Index3> index3(const std::string& key) {
    auto arr = array(key);
    if (!arr) return std::nullopt;
    require(arr->size() == 3, ErrorCode::config, "[" + name_ + "] " + key + " needs three entries");
    Index3 out{};
    for (int i = 0; i < 3; ++i) {
      auto v = (*arr)[static_cast<std::size_t>(i)]->value<std::int64_t>();
      require(v.has_value(), ErrorCode::config, "[" + name_ + "] " + key + " entries must be integers");
      out[static_cast<std::size_t>(i)] = *v;
    }
    return out;
  }

  std::optional<Vec3> vec3(const std::string& key) {
    auto arr = array(key);
    if (!arr) return std::nullopt;
    require(arr->size() == 3, ErrorCode::config, "[" + name_ + "] " + key + " needs three entries");
    Vec3 out{};
    for (int i = 0; i < 3; ++i) {
      auto v = (*arr)[static_cast<std::size_t>(i)]->value<double>();
      require(v.has_value(), ErrorCode::config, "[" + name_ + "] " + key + " entries must be numbers");
      out[static_cast<std::size_t>(i)] = *v;
    }
    return out;
  }

  const toml::table* subtable(const std::string& key) {
    used_.insert(key);
    if (!table_) return nullptr;
    const toml::node* node = table_->get(key);
    if (!node) return nullptr;
    require(node->is_table(), ErrorCode::config, "[" + name_ + "] " + key + " must be a table");
    return node->as_table();
  }

  void reject_unknown() const {
    if (!table_) return;
    for (const auto& [k, v] : *table_)
      require(used_.count(std::string(k.str())) == 1, ErrorCode::config,
              "unknown key '" + std::string(k.str()) + "' in [" + name_ + "]");
  }

 private:
  const toml::table* table_;
  std::string name_;
  std::set<std::string> used_;
};

const toml::table* section_table(const toml::table& root, const std::string& name) {
  const toml::node* node = root.get(name);
  if (!node) return nullptr;
  require(node->is_table(), ErrorCode::config, "'" + name + "' must be a table");
  return node->as_table();
}

void read_segmenter(Section& s, SegmenterConfig& c) {
  if (auto a = s.get<std::string>("architecture")) c.architecture = segmenter_arch_from(*a);
  s.read("base_width", c.base_width);
  s.read("depth", c.depth);
  s.read("window_size", c.window_size);
  s.read("seed", c.seed);
}

RotationPlane plane_from(const std::string& s) {
  if (s == "xy") return RotationPlane::xy;
  if (s == "xz") return RotationPlane::xz;
  if (s == "yz") return RotationPlane::yz;
  fail(ErrorCode::config, "unknown rotation plane '" + s + "'");
}

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : base / p; }

}  // namespace

void RunConfig::validate() const {
  require(!run_id.empty() && run_id.find('/') == std::string::npos, ErrorCode::config,
          "run_id must be a non-empty name without '/'");
  require(data_dir.has_value() != phantom.has_value(), ErrorCode::config,
          "exactly one data source is required: [data] dir or [phantom]");
  if (phantom) {
    require(phantom->n >= 1, ErrorCode::config, "[phantom] n must be >= 1");
    require(phantom->flt_fraction >= 0 && phantom->flt_fraction <= 1, ErrorCode::config,
            "[phantom] flt_fraction must lie in [0,1]");
  }
  require(cohort.protocol == "kfold" || cohort.protocol == "holdout", ErrorCode::config,
          "[cohort] protocol must be 'kfold' or 'holdout'");
  preprocess.validate();
  augment.validate();
  network.validate();
  ensemble_partner.validate();
  classifier.validate();
  train.validate();
  const auto m = network.spatial_multiple();
  for (auto e : augment.patch_size)
    require(e % m == 0, ErrorCode::config,
            "[augment] patch_size must be divisible by " + std::to_string(m) + " for the configured depth");
}

fs::path RunConfig::cases_dir() const { return data_dir ? *data_dir : output_dir / "phantoms"; }

RunConfig parse_run_config(const std::string& text, const fs::path& base_dir) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << e.description() << " at line " << e.source().begin.line;
    fail(ErrorCode::config, msg.str());
  }
  RunConfig c;
  const std::set<std::string> sections{"data",  "phantom",  "preprocess", "augment",  "cohort", "network",
                                       "ensemble", "classifier", "train", "pipeline", "output"};
  for (const auto& [k, v] : root) {
    const std::string key(k.str());
    if (key == "run_id" || key == "seed") continue;
    require(sections.count(key) == 1, ErrorCode::config, "unknown top-level key '" + key + "'");
  }
  if (auto v = root["run_id"].value<std::string>()) c.run_id = *v;
  if (auto v = root["seed"].value<std::int64_t>()) c.seed = static_cast<std::uint64_t>(*v);
  // Every component seed defaults to the run seed.
  c.augment.seed = c.network.seed = c.ensemble_partner.seed = c.classifier.seed = c.train.seed = c.cohort.seed = c.seed;

  {
    Section s(section_table(root, "data"), "data");
    if (auto d = s.get<std::string>("dir")) c.data_dir = resolve(base_dir, *d);
    if (const toml::table* remap = s.subtable("label_remap")) {
      for (const auto& [k, v] : *remap) {
        auto to = v.value<std::int64_t>();
        require(to.has_value() && *to >= 0 && *to <= kMaxLabel, ErrorCode::config,
                "label_remap targets must be class codes 0..3");
        std::int64_t from = 0;
        try {
          from = std::stoll(std::string(k.str()));
        } catch (const std::exception&) {
          fail(ErrorCode::config, "label_remap keys must be integers");
        }
        c.label_remap.table[from] = static_cast<std::uint8_t>(*to);
      }
    }
    s.reject_unknown();
  }
  if (const toml::table* t = section_table(root, "phantom")) {
    Section s(t, "phantom");
    PhantomSource p;
    p.seed = c.seed;
    s.read("n", p.n);
    s.read("flt_fraction", p.flt_fraction);
    s.read("seed", p.seed);
    c.phantom = p;
    s.reject_unknown();
  }
  {
    Section s(section_table(root, "preprocess"), "preprocess");
    s.read("hu_min", c.preprocess.hu_min);
    s.read("hu_max", c.preprocess.hu_max);
    if (auto v = s.vec3("target_spacing")) c.preprocess.target_spacing = *v;
    s.read("crop_margin", c.preprocess.crop_margin);
    s.read("foreground_threshold", c.preprocess.foreground_threshold);
    s.reject_unknown();
  }
  {
    Section s(section_table(root, "augment"), "augment");
    s.read("probability", c.augment.probability);
    if (auto v = s.index3("patch_size")) c.augment.patch_size = *v;
    if (auto arr = s.array("flip_axes")) {
      require(arr->size() == 3, ErrorCode::config, "[augment] flip_axes needs three booleans");
      for (std::size_t i = 0; i < 3; ++i) {
        auto b = (*arr)[i]->value<bool>();
        require(b.has_value(), ErrorCode::config, "[augment] flip_axes entries must be booleans");
        c.augment.flip_axes[i] = *b;
      }
    }
    if (auto arr = s.array("rotations")) {
      c.augment.rotations.clear();
      for (const auto* n : *arr) {
        auto name = n->value<std::string>();
        require(name.has_value(), ErrorCode::config, "[augment] rotations entries must be strings");
        c.augment.rotations.push_back(plane_from(*name));
      }
    }
    s.read("intensity_shift_max", c.augment.intensity_shift_max);
    s.read("bias_foreground", c.augment.bias_foreground);
    s.read("seed", c.augment.seed);
    s.reject_unknown();
  }
  {
    Section s(section_table(root, "cohort"), "cohort");
    s.read("protocol", c.cohort.protocol);
    s.read("k", c.cohort.k);
    s.read("n_train", c.cohort.n_train);
    s.read("n_val", c.cohort.n_val);
    s.read("n_test", c.cohort.n_test);
    s.read("seed", c.cohort.seed);
    s.reject_unknown();
  }
  {
    Section s(section_table(root, "network"), "network");
    read_segmenter(s, c.network);
    s.reject_unknown();
  }
  {
    Section s(section_table(root, "ensemble"), "ensemble");
    c.ensemble_partner.base_width = c.network.base_width;
    c.ensemble_partner.depth = c.network.depth;
    read_segmenter(s, c.ensemble_partner);
    s.reject_unknown();
  }
  {
    Section s(section_table(root, "classifier"), "classifier");
    if (auto a = s.get<std::string>("architecture")) c.classifier.architecture = classifier_arch_from(*a);
    s.read("growth_rate", c.classifier.growth_rate);
    if (auto arr = s.array("block_config")) {
      c.classifier.block_config.clear();
      for (const auto* n : *arr) {
        auto v = n->value<std::int64_t>();
        require(v.has_value(), ErrorCode::config, "[classifier] block_config entries must be integers");
        c.classifier.block_config.push_back(static_cast<int>(*v));
      }
    }
    s.read("seed", c.classifier.seed);
    s.reject_unknown();
  }
  {
    Section s(section_table(root, "train"), "train");
    s.read("initial_lr", c.train.initial_lr);
    s.read("lr_decay_factor", c.train.lr_decay_factor);
    s.read("lr_step_epochs", c.train.lr_step_epochs);
    s.read("weight_decay", c.train.weight_decay);
    s.read("batch_size", c.train.batch_size);
    s.read("epochs_primary", c.train.epochs_primary);
    s.read("epochs_cascade", c.train.epochs_cascade);
    if (auto l = s.get<std::string>("loss")) c.train.loss = loss_kind_from(*l);
    s.read("optimizer", c.train.optimizer);
    s.read("include_background", c.train.include_background);
    s.read("prefetch_workers", c.train.prefetch_workers);
    s.read("seed", c.train.seed);
    s.reject_unknown();
  }
  {
    Section s(section_table(root, "pipeline"), "pipeline");
    if (auto k = s.get<std::string>("kind")) c.pipeline.kind = pipeline_kind_from(*k);
    s.read("bypass_classifier", c.pipeline.bypass_classifier);
    s.read("flt_probability_threshold", c.pipeline.flt_probability_threshold);
    s.read("overlap", c.pipeline.inference.overlap);
    if (auto v = s.index3("patch_size")) c.pipeline.inference.patch_size = *v;
    if (auto v = s.index3("classifier_input_shape")) c.pipeline.classifier_input_shape = *v;
    s.reject_unknown();
  }
  {
    Section s(section_table(root, "output"), "output");
    if (auto d = s.get<std::string>("dir")) c.output_dir = *d;
    s.reject_unknown();
  }
  c.output_dir = resolve(base_dir, c.output_dir);
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::not_found, "config file " + path.string() + " does not exist");
  std::ostringstream text;
  text << in.rdbuf();
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  return parse_run_config(text.str(), base);
}

}  // namespace tbad
