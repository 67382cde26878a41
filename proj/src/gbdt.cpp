#include "medrag/gbdt.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "medrag/digest.hpp"
#include "medrag/error.hpp"

namespace medrag::gbdt {

void TrainConfig::validate() const {
  if (n_rounds < 0) fail(ErrorCode::Config, "n_rounds must be >= 0");
  if (!(learning_rate > 0.0 && learning_rate <= 1.0)) {
    fail(ErrorCode::Config, "learning_rate must be in (0, 1]");
  }
  if (!(lambda_l2 >= 0.0)) fail(ErrorCode::Config, "lambda_l2 must be >= 0");
  if (!(gamma_min_gain >= 0.0)) fail(ErrorCode::Config, "gamma_min_gain must be >= 0");
  if (max_depth < 1) fail(ErrorCode::Config, "max_depth must be >= 1");
  if (!(min_child_weight >= 0.0)) fail(ErrorCode::Config, "min_child_weight must be >= 0");
  if (!std::isfinite(base_margin)) fail(ErrorCode::Config, "base_margin must be finite");
  if (subsample != 1.0 || colsample != 1.0 || early_stopping_rounds != 0) {
    fail(ErrorCode::Config, "subsampling and early stopping are reserved and must stay disabled");
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"n_rounds", n_rounds},
          {"learning_rate", learning_rate},
          {"lambda_l2", lambda_l2},
          {"gamma_min_gain", gamma_min_gain},
          {"max_depth", max_depth},
          {"min_child_weight", min_child_weight},
          {"base_margin", base_margin},
          {"seed", seed},
          {"subsample", subsample},
          {"colsample", colsample},
          {"early_stopping_rounds", early_stopping_rounds}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.n_rounds = j.value("n_rounds", c.n_rounds);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.lambda_l2 = j.value("lambda_l2", c.lambda_l2);
    c.gamma_min_gain = j.value("gamma_min_gain", c.gamma_min_gain);
    c.max_depth = j.value("max_depth", c.max_depth);
    c.min_child_weight = j.value("min_child_weight", c.min_child_weight);
    c.base_margin = j.value("base_margin", c.base_margin);
    c.seed = j.value("seed", c.seed);
    c.subsample = j.value("subsample", c.subsample);
    c.colsample = j.value("colsample", c.colsample);
    c.early_stopping_rounds = j.value("early_stopping_rounds", c.early_stopping_rounds);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Config, std::string("bad train config: ") + e.what());
  }
  c.validate();
  return c;
}

Matrix Matrix::select_columns(const std::vector<std::size_t>& columns) const {
  Matrix out(rows_, columns.size());
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < columns.size(); ++c) out.at(r, c) = at(r, columns[c]);
  }
  return out;
}

Matrix Matrix::select_rows(const std::vector<std::size_t>& rows) const {
  Matrix out(rows.size(), cols_);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(rows[r] * cols_), cols_,
                out.data_.begin() + static_cast<std::ptrdiff_t>(r * cols_));
  }
  return out;
}

Matrix Matrix::with_column(std::span<const double> values) const {
  if (values.size() != rows_) fail(ErrorCode::ShapeMismatch, "column length differs from rows");
  Matrix out(rows_, cols_ + 1);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < cols_; ++c) out.at(r, c) = at(r, c);
    out.at(r, cols_) = values[r];
  }
  return out;
}

double sigmoid(double margin) {
  constexpr double kEps = 1e-16;
  const double p = 1.0 / (1.0 + std::exp(-margin));
  return std::clamp(p, kEps, 1.0 - kEps);
}

double log_loss(double margin, int y) {
  // log(1 + e^m) - y*m, computed without overflow.
  return std::log1p(std::exp(-std::fabs(margin))) + std::max(margin, 0.0) - y * margin;
}

GradHess grad_hess_logistic(double margin, int y) {
  const double p = sigmoid(margin);
  return {p - static_cast<double>(y), p * (1.0 - p)};
}

double split_threshold(double a, double b) {
  double t = 0.5 * (a + b);
  if (!std::isfinite(t)) t = a + 0.5 * (b - a);
  if (!(a < t && t <= b)) t = b;
  return t;
}

namespace {

using RowList = std::vector<std::uint32_t>;

void scan_feature(int feature, const RowList& sorted, const Matrix& x, std::span<const double> g,
                  std::span<const double> h, double g_missing, double h_missing,
                  const TrainConfig& cfg, std::optional<SplitDecision>& best) {
  if (sorted.size() < 2) return;
  double g_present = 0.0;
  double h_present = 0.0;
  for (auto r : sorted) {
    g_present += g[r];
    h_present += h[r];
  }
  const double lambda = cfg.lambda_l2;
  double gl_run = 0.0;
  double hl_run = 0.0;
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
    const auto r = sorted[i];
    gl_run += g[r];
    hl_run += h[r];
    const double v = x.at(r, static_cast<std::size_t>(feature));
    const double next = x.at(sorted[i + 1], static_cast<std::size_t>(feature));
    if (!(v < next)) continue;
    const double threshold = split_threshold(v, next);
    const double gr_run = g_present - gl_run;
    const double hr_run = h_present - hl_run;
    for (bool default_left : {true, false}) {
      const double gl = gl_run + (default_left ? g_missing : 0.0);
      const double hl = hl_run + (default_left ? h_missing : 0.0);
      const double gr = gr_run + (default_left ? 0.0 : g_missing);
      const double hr = hr_run + (default_left ? 0.0 : h_missing);
      if (hl < cfg.min_child_weight || hr < cfg.min_child_weight) continue;
      const double gt = gl + gr;
      const double gain = 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) -
                                 gt * gt / (hl + hr + lambda)) -
                          cfg.gamma_min_gain;
      if (!(gain > kMinSplitGain)) continue;
      if (!best || gain_beats(gain, best->gain)) {
        best = SplitDecision{feature, threshold, default_left, gain};
      }
    }
  }
}

// Present rows of each feature sorted by (value, row).
std::vector<RowList> presort(const Matrix& x, const RowList& rows) {
  std::vector<RowList> sorted(x.cols());
  for (std::size_t f = 0; f < x.cols(); ++f) {
    auto& list = sorted[f];
    for (auto r : rows) {
      if (!is_missing(x.at(r, f))) list.push_back(r);
    }
    std::stable_sort(list.begin(), list.end(), [&](std::uint32_t a, std::uint32_t b) {
      return x.at(a, f) < x.at(b, f);
    });
  }
  return sorted;
}

std::optional<SplitDecision> find_split(const Matrix& x, const RowList& rows,
                                        const std::vector<RowList>& sorted,
                                        std::span<const double> g, std::span<const double> h,
                                        const TrainConfig& cfg) {
  std::optional<SplitDecision> best;
  for (std::size_t f = 0; f < x.cols(); ++f) {
    double g_missing = 0.0;
    double h_missing = 0.0;
    if (sorted[f].size() != rows.size()) {
      for (auto r : rows) {
        if (is_missing(x.at(r, f))) {
          g_missing += g[r];
          h_missing += h[r];
        }
      }
    }
    scan_feature(static_cast<int>(f), sorted[f], x, g, h, g_missing, h_missing, cfg, best);
  }
  return best;
}

bool goes_left(double value, const TreeNode& node) {
  if (is_missing(value)) return node.default_left;
  return value < node.threshold;
}

class Grower {
 public:
  Grower(const Matrix& x, std::span<const double> g, std::span<const double> h,
         const TrainConfig& cfg)
      : x_(x), g_(g), h_(h), cfg_(cfg), leaf_of_(x.rows(), -1) {}

  Tree grow(const RowList& rows, std::vector<RowList> sorted) {
    build(rows, std::move(sorted), 0);
    return std::move(tree_);
  }

  const std::vector<int>& leaf_of() const { return leaf_of_; }

 private:
  int build(const RowList& rows, std::vector<RowList> sorted, int depth) {
    double gs = 0.0;
    double hs = 0.0;
    for (auto r : rows) {
      gs += g_[r];
      hs += h_[r];
    }
    const int index = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    tree_.nodes[index].cover = hs;

    std::optional<SplitDecision> split;
    if (depth < cfg_.max_depth && rows.size() >= 2) {
      split = find_split(x_, rows, sorted, g_, h_, cfg_);
    }
    if (!split) {
      tree_.nodes[index].weight = -gs / (hs + cfg_.lambda_l2);
      for (auto r : rows) leaf_of_[r] = index;
      return index;
    }

    TreeNode node;
    node.is_leaf = false;
    node.feature = split->feature;
    node.threshold = split->threshold;
    node.default_left = split->default_left;
    node.gain = split->gain;
    node.cover = hs;

    std::vector<char> left_flag(x_.rows(), 0);
    RowList left_rows;
    RowList right_rows;
    for (auto r : rows) {
      if (goes_left(x_.at(r, static_cast<std::size_t>(node.feature)), node)) {
        left_flag[r] = 1;
        left_rows.push_back(r);
      } else {
        right_rows.push_back(r);
      }
    }
    std::vector<RowList> left_sorted(sorted.size());
    std::vector<RowList> right_sorted(sorted.size());
    for (std::size_t f = 0; f < sorted.size(); ++f) {
      for (auto r : sorted[f]) (left_flag[r] ? left_sorted[f] : right_sorted[f]).push_back(r);
    }
    sorted.clear();
    sorted.shrink_to_fit();

    tree_.nodes[index] = node;
    const int left = build(left_rows, std::move(left_sorted), depth + 1);
    const int right = build(right_rows, std::move(right_sorted), depth + 1);
    tree_.nodes[index].left = left;
    tree_.nodes[index].right = right;
    return index;
  }

  const Matrix& x_;
  std::span<const double> g_;
  std::span<const double> h_;
  const TrainConfig& cfg_;
  Tree tree_;
  std::vector<int> leaf_of_;
};

RowList all_rows(std::size_t n) {
  RowList rows(n);
  std::iota(rows.begin(), rows.end(), 0U);
  return rows;
}

nlohmann::json node_to_json(const Tree& tree, int index) {
  const auto& n = tree.nodes[static_cast<std::size_t>(index)];
  if (n.is_leaf) return {{"leaf", n.weight}, {"cover", n.cover}};
  return {{"split", n.feature},
          {"threshold", n.threshold},
          {"default_left", n.default_left},
          {"gain", n.gain},
          {"cover", n.cover},
          {"left", node_to_json(tree, n.left)},
          {"right", node_to_json(tree, n.right)}};
}

int node_from_json(const nlohmann::json& j, Tree& tree, std::size_t n_features) {
  const int index = static_cast<int>(tree.nodes.size());
  tree.nodes.emplace_back();
  TreeNode n;
  n.cover = j.at("cover").get<double>();
  if (j.contains("leaf")) {
    n.weight = j.at("leaf").get<double>();
    tree.nodes[static_cast<std::size_t>(index)] = n;
    return index;
  }
  n.is_leaf = false;
  n.feature = j.at("split").get<int>();
  if (n.feature < 0 || static_cast<std::size_t>(n.feature) >= n_features) {
    fail(ErrorCode::Parse, "split feature index out of range");
  }
  n.threshold = j.at("threshold").get<double>();
  n.default_left = j.at("default_left").get<bool>();
  n.gain = j.at("gain").get<double>();
  tree.nodes[static_cast<std::size_t>(index)] = n;
  const int left = node_from_json(j.at("left"), tree, n_features);
  const int right = node_from_json(j.at("right"), tree, n_features);
  tree.nodes[static_cast<std::size_t>(index)].left = left;
  tree.nodes[static_cast<std::size_t>(index)].right = right;
  return index;
}

}  // namespace

std::optional<SplitDecision> best_split(const Matrix& x, std::span<const std::size_t> rows,
                                        std::span<const double> g, std::span<const double> h,
                                        const TrainConfig& config) {
  if (rows.size() < 2) return std::nullopt;
  RowList list(rows.begin(), rows.end());
  std::sort(list.begin(), list.end());
  return find_split(x, list, presort(x, list), g, h, config);
}

int Tree::leaf_index(std::span<const double> row) const {
  int i = 0;
  while (!nodes[static_cast<std::size_t>(i)].is_leaf) {
    const auto& n = nodes[static_cast<std::size_t>(i)];
    i = goes_left(row[static_cast<std::size_t>(n.feature)], n) ? n.left : n.right;
  }
  return i;
}

Tree grow_tree(const Matrix& x, std::span<const double> g, std::span<const double> h,
               const TrainConfig& config) {
  config.validate();
  const auto rows = all_rows(x.rows());
  return Grower(x, g, h, config).grow(rows, presort(x, rows));
}

double BoostModel::margin(std::size_t label, std::span<const double> row) const {
  double m = config.base_margin;
  for (const auto& tree : ensembles[label].trees) m += config.learning_rate * tree.leaf_value(row);
  return m;
}

std::vector<double> BoostModel::predict_proba(std::span<const double> row) const {
  if (row.size() != feature_names.size()) {
    fail(ErrorCode::ShapeMismatch, "row width differs from model features");
  }
  std::vector<double> out;
  out.reserve(ensembles.size());
  for (std::size_t l = 0; l < ensembles.size(); ++l) out.push_back(sigmoid(margin(l, row)));
  return out;
}

std::vector<double> BoostModel::to_row(const scoring::FeatureVector& fv) const {
  std::vector<double> row;
  row.reserve(feature_names.size());
  for (const auto& name : feature_names) {
    const auto it = fv.values.find(name);
    if (it == fv.values.end()) {
      fail(ErrorCode::UnknownFeatureSpace, "feature vector lacks model feature '" + name + "'");
    }
    row.push_back(it->second ? *it->second : kMissing);
  }
  return row;
}

std::map<std::string, double> BoostModel::predict_proba(const scoring::FeatureVector& fv) const {
  const auto probs = predict_proba(to_row(fv));
  std::map<std::string, double> out;
  for (std::size_t l = 0; l < label_names.size(); ++l) out.emplace(label_names[l], probs[l]);
  return out;
}

nlohmann::json BoostModel::to_json() const {
  nlohmann::json ensembles_json = nlohmann::json::array();
  for (const auto& e : ensembles) {
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& t : e.trees) trees.push_back(node_to_json(t, 0));
    ensembles_json.push_back({{"label", e.label}, {"trees", std::move(trees)}});
  }
  nlohmann::json body = {{"schema_version", kSchemaVersion},
                         {"config", config.to_json()},
                         {"feature_names", feature_names},
                         {"label_names", label_names},
                         {"manifest",
                          {{"bank_digest", manifest.bank_digest},
                           {"revision_digest", manifest.revision_digest},
                           {"index_digest", manifest.index_digest},
                           {"build", manifest.build}}},
                         {"ensembles", std::move(ensembles_json)}};
  const std::string digest = sha256_hex(body.dump());
  body["model_digest"] = digest;
  return body;
}

std::string BoostModel::serialize() const { return to_json().dump() + "\n"; }

std::string BoostModel::digest() const { return to_json().at("model_digest").get<std::string>(); }

BoostModel BoostModel::from_json(const nlohmann::json& source) {
  try {
    const int version = source.at("schema_version").get<int>();
    if (version != kSchemaVersion) {
      fail(ErrorCode::VersionMismatch, "model schema version " + std::to_string(version) +
                                           ", expected " + std::to_string(kSchemaVersion));
    }
    nlohmann::json body = source;
    const std::string stored = body.at("model_digest").get<std::string>();
    body.erase("model_digest");
    if (sha256_hex(body.dump()) != stored) {
      fail(ErrorCode::DigestMismatch, "model digest does not match its contents");
    }
    BoostModel m;
    m.config = TrainConfig::from_json(body.at("config"));
    m.feature_names = body.at("feature_names").get<std::vector<std::string>>();
    m.label_names = body.at("label_names").get<std::vector<std::string>>();
    const auto& man = body.at("manifest");
    m.manifest = {man.at("bank_digest").get<std::string>(), man.at("revision_digest").get<std::string>(),
                  man.at("index_digest").get<std::string>(), man.at("build").get<std::string>()};
    for (const auto& e : body.at("ensembles")) {
      Ensemble ens;
      ens.label = e.at("label").get<std::string>();
      for (const auto& t : e.at("trees")) {
        Tree tree;
        node_from_json(t, tree, m.feature_names.size());
        ens.trees.push_back(std::move(tree));
      }
      m.ensembles.push_back(std::move(ens));
    }
    if (m.ensembles.size() != m.label_names.size()) {
      fail(ErrorCode::Parse, "ensemble count differs from label count");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("malformed model: ") + e.what());
  }
}

void BoostModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write model: " + path);
  out << serialize();
  if (!out) fail(ErrorCode::Io, "failed writing model: " + path);
}

BoostModel BoostModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open model: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, "unreadable model " + path + ": " + e.what());
  }
  return from_json(j);
}

BoostModel train(const Matrix& x, const LabelMatrix& labels,
                 const std::vector<std::string>& feature_names,
                 const std::vector<std::string>& label_names, const TrainConfig& config,
                 TrainLog* log) {
  config.validate();
  if (labels.size() != x.rows()) fail(ErrorCode::ShapeMismatch, "label rows differ from matrix rows");
  if (feature_names.size() != x.cols()) {
    fail(ErrorCode::ShapeMismatch, "feature names differ from matrix columns");
  }
  if (label_names.empty()) fail(ErrorCode::ShapeMismatch, "at least one label column is required");
  for (const auto& row : labels) {
    if (row.size() != label_names.size()) fail(ErrorCode::ShapeMismatch, "ragged label row");
  }

  BoostModel model;
  model.config = config;
  model.feature_names = feature_names;
  model.label_names = label_names;
  if (log) log->loss.assign(label_names.size(), {});

  const std::size_t n = x.rows();
  const auto rows = all_rows(n);
  const auto sorted = presort(x, rows);
  std::vector<double> g(n);
  std::vector<double> h(n);
  std::vector<double> margins(n);

  for (std::size_t l = 0; l < label_names.size(); ++l) {
    Ensemble ens;
    ens.label = label_names[l];
    std::size_t positives = 0;
    for (const auto& row : labels) positives += row[l] != 0 ? 1 : 0;
    if (positives == 0 || positives == n) {
      spdlog::warn("label '{}' has no {} examples; using the constant base-margin model",
                   label_names[l], positives == 0 ? "positive" : "negative");
      if (log) log->degenerate_labels.push_back(label_names[l]);
      model.ensembles.push_back(std::move(ens));
      continue;
    }
    std::fill(margins.begin(), margins.end(), config.base_margin);
    for (int round = 0; round < config.n_rounds; ++round) {
      for (std::size_t r = 0; r < n; ++r) {
        const auto gh = grad_hess_logistic(margins[r], labels[r][l]);
        g[r] = gh.g;
        h[r] = gh.h;
      }
      Grower grower(x, g, h, config);
      Tree tree = grower.grow(rows, sorted);
      const auto& leaf_of = grower.leaf_of();
      for (std::size_t r = 0; r < n; ++r) {
        margins[r] += config.learning_rate * tree.nodes[static_cast<std::size_t>(leaf_of[r])].weight;
      }
      ens.trees.push_back(std::move(tree));
      if (log) {
        double loss = 0.0;
        for (std::size_t r = 0; r < n; ++r) loss += log_loss(margins[r], labels[r][l]);
        log->loss[l].push_back(loss / static_cast<double>(n));
      }
    }
    model.ensembles.push_back(std::move(ens));
  }
  return model;
}

std::map<std::string, double> feature_importance(const BoostModel& model) {
  std::map<std::string, double> out;
  for (const auto& name : model.feature_names) out.emplace(name, 0.0);
  for (const auto& e : model.ensembles) {
    for (const auto& t : e.trees) {
      for (const auto& n : t.nodes) {
        if (!n.is_leaf) out[model.feature_names[static_cast<std::size_t>(n.feature)]] += n.gain;
      }
    }
  }
  return out;
}

}  // namespace medrag::gbdt
