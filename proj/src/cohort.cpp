#include "tbad/cohort.hpp"

#include <algorithm>
#include <fstream>
#include <cmath>
#include <numeric>
#include <set>

#include "tbad/rng.hpp"

namespace tbad {

using nlohmann::json;

const CaseRecord& CohortManifest::find(const std::string& id) const {
  const auto it = std::find_if(cases.begin(), cases.end(), [&](const CaseRecord& r) { return r.id == id; });
  require(it != cases.end(), ErrorCode::not_found, "case " + id + " not in manifest");
  return *it;
}

std::size_t CohortManifest::flt_positive_count() const {
  return static_cast<std::size_t>(std::count_if(cases.begin(), cases.end(), [](const auto& r) { return r.has_flt; }));
}

CohortManifest build_manifest(const fs::path& data_dir, const LabelRemap& remap) {
  CohortManifest manifest;
  if (!fs::is_directory(data_dir)) {
    manifest.warnings.push_back("data directory " + data_dir.string() + " does not exist");
    return manifest;
  }
  std::vector<std::pair<std::string, fs::path>> images;
  for (const auto& entry : fs::directory_iterator(data_dir)) {
    if (!entry.is_regular_file()) continue;
    if (auto id = case_id_from_image_name(entry.path().filename().string())) images.emplace_back(*id, entry.path());
  }
  std::sort(images.begin(), images.end());
  for (const auto& [id, image_path] : images) {
    fs::path label_path = label_path_for(data_dir, id);
    if (!fs::exists(label_path)) label_path = data_dir / (id + "_label.nii");
    if (!fs::exists(label_path)) {
      manifest.unlabeled.push_back(id);
      manifest.warnings.push_back("image " + image_path.filename().string() + " has no label; excluded from splits");
      continue;
    }
    const auto header = read_nifti_header(image_path);
    const LabelMap label = read_label(label_path, remap);
    require(label.shape() == header.shape, ErrorCode::alignment, "label shape mismatch for case " + id);
    CaseRecord record;
    record.id = id;
    record.image_path = image_path;
    record.label_path = label_path;
    record.has_flt = contains_class(label, LabelClass::thrombosis);
    record.shape = header.shape;
    record.spacing = header.spacing;
    manifest.cases.push_back(std::move(record));
  }
  if (manifest.cases.empty() && manifest.unlabeled.empty())
    manifest.warnings.push_back("no cases found in " + data_dir.string());
  return manifest;
}

namespace {

void shuffle_ids(std::vector<std::string>& ids, Rng& rng) {
  // Fisher-Yates driven by our own stream so the order is stable across platforms using libstdc++.
  for (std::int64_t i = static_cast<std::int64_t>(ids.size()) - 1; i > 0; --i)
    std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(rng.uniform_int(0, i))]);
}

std::pair<std::vector<std::string>, std::vector<std::string>> strata(const CohortManifest& manifest) {
  std::vector<std::string> pos, neg;
  for (const auto& r : manifest.cases) (r.has_flt ? pos : neg).push_back(r.id);
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  return {pos, neg};
}

}  // namespace

std::vector<FoldSplit> stratified_folds(const CohortManifest& manifest, int k, std::uint64_t seed) {
  require(k >= 2, ErrorCode::infeasible_split, "k must be >= 2");
  require(static_cast<std::size_t>(k) <= manifest.cases.size(), ErrorCode::infeasible_split,
          "k=" + std::to_string(k) + " exceeds cohort size " + std::to_string(manifest.cases.size()));
  auto [pos, neg] = strata(manifest);
  Rng rng_pos = Rng::derive(seed, "folds/flt-positive");
  Rng rng_neg = Rng::derive(seed, "folds/flt-negative");
  shuffle_ids(pos, rng_pos);
  shuffle_ids(neg, rng_neg);

  std::vector<std::vector<std::string>> buckets(static_cast<std::size_t>(k));
  std::size_t next = 0;
  for (const auto& id : pos) buckets[next++ % k].push_back(id);
  for (const auto& id : neg) buckets[next++ % k].push_back(id);

  std::vector<FoldSplit> folds;
  for (int i = 0; i < k; ++i) {
    FoldSplit f;
    f.fold_index = i;
    const int val_bucket = (i + 1) % k;
    for (int b = 0; b < k; ++b) {
      auto& dst = b == i ? f.test : (b == val_bucket ? f.validation : f.train);
      dst.insert(dst.end(), buckets[b].begin(), buckets[b].end());
    }
    folds.push_back(std::move(f));
  }
  return folds;
}

FoldSplit holdout_split(const CohortManifest& manifest, int n_train, int n_val, int n_test, std::uint64_t seed) {
  const auto n = static_cast<std::int64_t>(manifest.cases.size());
  require(n_train >= 0 && n_val >= 0 && n_test >= 0 && n_train + n_val + n_test == n, ErrorCode::infeasible_split,
          "role sizes " + std::to_string(n_train) + "/" + std::to_string(n_val) + "/" + std::to_string(n_test) +
              " do not sum to cohort size " + std::to_string(n));
  auto [pos, neg] = strata(manifest);
  Rng rng_pos = Rng::derive(seed, "holdout/flt-positive");
  Rng rng_neg = Rng::derive(seed, "holdout/flt-negative");
  shuffle_ids(pos, rng_pos);
  shuffle_ids(neg, rng_neg);

  // Largest-remainder apportionment of positives across roles (ties: test, validation, train).
  const std::array<std::int64_t, 3> sizes{n_test, n_val, n_train};
  const auto n_pos = static_cast<std::int64_t>(pos.size());
  std::array<std::int64_t, 3> quota{};
  std::array<double, 3> remainder{};
  std::int64_t assigned = 0;
  for (int r = 0; r < 3; ++r) {
    const double exact = n > 0 ? static_cast<double>(sizes[r]) * static_cast<double>(n_pos) / static_cast<double>(n) : 0;
    quota[r] = static_cast<std::int64_t>(std::floor(exact));
    remainder[r] = exact - static_cast<double>(quota[r]);
    assigned += quota[r];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return remainder[a] > remainder[b]; });
  for (int i = 0; assigned < n_pos; i = (i + 1) % 3) {
    const int r = order[i];
    if (quota[r] < sizes[r]) {
      ++quota[r];
      ++assigned;
    }
  }
  // Roles must still be fillable with negatives.
  for (int r = 0; r < 3; ++r) {
    while (quota[r] > sizes[r]) --quota[r];
  }

  FoldSplit split;
  std::array<std::vector<std::string>*, 3> roles{&split.test, &split.validation, &split.train};
  std::size_t p = 0, q = 0;
  for (int r = 0; r < 3; ++r) {
    for (std::int64_t i = 0; i < quota[r]; ++i) roles[r]->push_back(pos[p++]);
    while (static_cast<std::int64_t>(roles[r]->size()) < sizes[r] && q < neg.size()) roles[r]->push_back(neg[q++]);
    while (static_cast<std::int64_t>(roles[r]->size()) < sizes[r] && p < pos.size()) roles[r]->push_back(pos[p++]);
  }
  return split;
}

void to_json(json& j, const CaseRecord& r) {
  j = json{{"id", r.id},
           {"image_path", r.image_path.string()},
           {"label_path", r.label_path.string()},
           {"has_flt", r.has_flt},
           {"shape", r.shape},
           {"spacing", r.spacing}};
}

void from_json(const json& j, CaseRecord& r) {
  r.id = j.at("id").get<std::string>();
  r.image_path = j.at("image_path").get<std::string>();
  r.label_path = j.at("label_path").get<std::string>();
  r.has_flt = j.at("has_flt").get<bool>();
  r.shape = j.at("shape").get<Index3>();
  r.spacing = j.at("spacing").get<Vec3>();
}

void to_json(json& j, const FoldSplit& s) {
  j = json{{"fold_index", s.fold_index}, {"train", s.train}, {"validation", s.validation}, {"test", s.test}};
}

void from_json(const json& j, FoldSplit& s) {
  s.fold_index = j.at("fold_index").get<int>();
  s.train = j.at("train").get<std::vector<std::string>>();
  s.validation = j.at("validation").get<std::vector<std::string>>();
  s.test = j.at("test").get<std::vector<std::string>>();
}

json manifest_to_json(const CohortManifest& manifest) {
  return json{{"schema_version", kManifestSchemaVersion},
              {"cases", manifest.cases},
              {"unlabeled", manifest.unlabeled},
              {"warnings", manifest.warnings}};
}

CohortManifest manifest_from_json(const json& j) {
  require(j.value("schema_version", 0) == kManifestSchemaVersion, ErrorCode::unsupported_format,
          "unsupported manifest schema version");
  CohortManifest m;
  m.cases = j.at("cases").get<std::vector<CaseRecord>>();
  m.unlabeled = j.value("unlabeled", std::vector<std::string>{});
  m.warnings = j.value("warnings", std::vector<std::string>{});
  return m;
}

void write_json_file(const json& j, const fs::path& path) {
  std::error_code ec;
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  require(static_cast<bool>(out), ErrorCode::io, "failed writing " + path.string());
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::not_found, "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::unsupported_format, path.string() + ": " + e.what());
  }
}

void write_manifest(const CohortManifest& manifest, const fs::path& path) {
  write_json_file(manifest_to_json(manifest), path);
}

CohortManifest read_manifest(const fs::path& path) { return manifest_from_json(read_json_file(path)); }

void write_splits(const SplitFile& splits, const fs::path& path) {
  write_json_file(json{{"schema_version", kSplitsSchemaVersion},
                       {"protocol", splits.protocol},
                       {"k", splits.k},
                       {"seed", splits.seed},
                       {"folds", splits.folds}},
                  path);
}

SplitFile read_splits(const fs::path& path) {
  const json j = read_json_file(path);
  require(j.value("schema_version", 0) == kSplitsSchemaVersion, ErrorCode::unsupported_format,
          "unsupported splits schema version");
  SplitFile s;
  s.protocol = j.at("protocol").get<std::string>();
  s.k = j.at("k").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.folds = j.at("folds").get<std::vector<FoldSplit>>();
  return s;
}

}  // namespace tbad
