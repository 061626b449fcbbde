#include "churnkit/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "churnkit/rng.hpp"

namespace churnkit {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& what,
                    std::size_t line_no) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc{} || ptr != e || !std::isfinite(v)) {
    throw std::invalid_argument("line " + std::to_string(line_no) +
                                ": non-numeric " + what + " value '" + s + "'");
  }
  return v;
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

// Deterministic Fisher-Yates over [0, n) from the given stream.
IndexList shuffled_indices(std::size_t n, Rng rng) {
  IndexList idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace

Dataset load_dataset(const std::string& path, Task task,
                     const std::string& name) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);

  std::string line;
  if (!std::getline(in, line)) {
    throw std::invalid_argument("dataset file is empty: " + path);
  }
  auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "y") {
    throw std::invalid_argument(
        "malformed header: expected 'id,y,f0,...', got '" + line + "'");
  }
  const std::size_t d = header.size() - 2;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j + 2] != "f" + std::to_string(j)) {
      throw std::invalid_argument("malformed header: feature column " +
                                  std::to_string(j) + " must be named f" +
                                  std::to_string(j));
    }
  }

  Dataset ds;
  ds.task = task;
  ds.name = name.empty() ? path : name;
  std::vector<double> flat;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != d + 2) {
      throw std::invalid_argument("line " + std::to_string(line_no) +
                                  ": expected " + std::to_string(d + 2) +
                                  " columns, got " +
                                  std::to_string(cells.size()));
    }
    const std::string& id = cells[0];
    if (id.empty()) {
      throw std::invalid_argument("line " + std::to_string(line_no) +
                                  ": empty id");
    }
    if (!seen.insert(id).second) {
      throw std::invalid_argument("duplicate id '" + id + "' at line " +
                                  std::to_string(line_no));
    }
    double y = parse_double(cells[1], "target", line_no);
    if (task == Task::binary_classification) {
      if (y != std::floor(y)) {
        throw std::invalid_argument("line " + std::to_string(line_no) +
                                    ": non-integer class label '" + cells[1] +
                                    "'");
      }
      if (y < 0.0 || y > 1.0) {
        throw std::invalid_argument("line " + std::to_string(line_no) +
                                    ": class label out of range [0,1]: '" +
                                    cells[1] + "'");
      }
    }
    ds.ids.push_back(id);
    ds.targets.push_back(y);
    for (std::size_t j = 0; j < d; ++j) {
      flat.push_back(parse_double(cells[j + 2], "feature f" + std::to_string(j),
                                  line_no));
    }
  }
  if (ds.ids.empty()) {
    throw std::invalid_argument("dataset has no rows: " + path);
  }
  ds.features = Matrix(ds.ids.size(), d);
  ds.features.data() = std::move(flat);
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path);
  out << "id,y";
  for (std::size_t j = 0; j < ds.dim(); ++j) out << ",f" << j;
  out << "\n";
  for (std::size_t i = 0; i < ds.n(); ++i) {
    out << ds.ids[i] << "," << format_double(ds.targets[i]);
    for (std::size_t j = 0; j < ds.dim(); ++j) {
      out << "," << format_double(ds.features(i, j));
    }
    out << "\n";
  }
}

Split make_canonical_split(const Dataset& ds, std::uint64_t canonical_seed,
                           double test_frac) {
  if (test_frac <= 0.0 || test_frac >= 1.0) {
    throw std::invalid_argument("test_frac must be in (0, 1)");
  }
  const std::size_t n = ds.n();
  IndexList order = shuffled_indices(n, Rng::stream("split", {canonical_seed}));
  const auto n_train = static_cast<std::size_t>(
      std::ceil(static_cast<double>(n) * (1.0 - test_frac)));
  if (n_train == 0 || n_train == n) {
    throw std::invalid_argument("split leaves an empty train pool or test set");
  }
  Split s;
  s.canonical_seed = canonical_seed;
  s.train_pool.assign(order.begin(), order.begin() + n_train);
  s.id_test.assign(order.begin() + n_train, order.end());
  return s;
}

Split load_split_file(const Dataset& ds, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open split file: " + path);
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) !=
                                     std::vector<std::string>{"id", "role"}) {
    throw std::invalid_argument("malformed split header: expected 'id,role'");
  }
  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < ds.n(); ++i) row_of[ds.ids[i]] = i;
  std::unordered_set<std::string> seen;
  Split s;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != 2) {
      throw std::invalid_argument("split line " + std::to_string(line_no) +
                                  ": expected 'id,role'");
    }
    auto it = row_of.find(cells[0]);
    if (it == row_of.end()) {
      throw std::invalid_argument("split id '" + cells[0] +
                                  "' not present in dataset");
    }
    if (!seen.insert(cells[0]).second) {
      throw std::invalid_argument("split lists id '" + cells[0] + "' twice");
    }
    if (cells[1] == "train") {
      s.train_pool.push_back(it->second);
    } else if (cells[1] == "test") {
      s.id_test.push_back(it->second);
    } else {
      throw std::invalid_argument("split role must be 'train' or 'test', got '" +
                                  cells[1] + "'");
    }
  }
  if (seen.size() != ds.n()) {
    throw std::invalid_argument("split file must cover every dataset id");
  }
  if (s.train_pool.empty() || s.id_test.empty()) {
    throw std::invalid_argument("split leaves an empty train pool or test set");
  }
  return s;
}

void save_split_file(const Dataset& ds, const Split& split,
                     const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write split file: " + path);
  out << "id,role\n";
  for (std::size_t i : split.train_pool) out << ds.ids[i] << ",train\n";
  for (std::size_t i : split.id_test) out << ds.ids[i] << ",test\n";
}

BootstrapSample draw_bootstrap(const IndexList& pool, std::uint64_t seed) {
  if (pool.empty()) throw std::invalid_argument("bootstrap pool is empty");
  BootstrapSample s;
  s.seed = seed;
  s.indices.reserve(pool.size());
  Rng rng = Rng::stream("bootstrap", {seed});
  for (std::size_t i = 0; i < pool.size(); ++i) {
    s.indices.push_back(pool[rng.below(pool.size())]);
  }
  return s;
}

OverlapStats overlap_stats(const BootstrapSample& a, const BootstrapSample& b) {
  if (a.indices.size() != b.indices.size()) {
    throw std::invalid_argument(
        "overlap_stats: samples drawn from different pools");
  }
  const double pool_n = static_cast<double>(a.indices.size());
  std::unordered_set<std::size_t> ua(a.indices.begin(), a.indices.end());
  std::unordered_set<std::size_t> ub(b.indices.begin(), b.indices.end());
  std::size_t shared = 0;
  for (std::size_t v : ua) shared += ub.count(v);
  OverlapStats st;
  st.shared_unique_frac = static_cast<double>(shared) / pool_n;
  st.unique_frac_a = static_cast<double>(ua.size()) / pool_n;
  st.unique_frac_b = static_cast<double>(ub.size()) / pool_n;
  return st;
}

FilterOutcome majority_filter(double erm_acc, double majority_frac,
                              std::size_t test_n) {
  FilterOutcome o;
  o.erm_acc = erm_acc;
  o.majority_frac = majority_frac;
  o.gap_pp = 100.0 * (erm_acc - majority_frac);
  o.test_n = test_n;
  if (o.gap_pp >= 5.0 && test_n >= 60) {
    o.verdict = FilterVerdict::pass;
  } else if (o.gap_pp >= 3.0 && o.gap_pp < 5.0 && test_n >= 50) {
    o.verdict = FilterVerdict::borderline;
  } else {
    o.verdict = FilterVerdict::fail;
  }
  return o;
}

const char* filter_verdict_name(FilterVerdict v) {
  switch (v) {
    case FilterVerdict::pass: return "pass";
    case FilterVerdict::borderline: return "borderline";
    case FilterVerdict::fail: return "fail";
  }
  return "fail";
}

Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.n < 4) throw std::invalid_argument("synthetic spec: n must be >= 4");
  if (spec.d < 1) throw std::invalid_argument("synthetic spec: d must be >= 1");
  if (spec.class_sep < 0.0) {
    throw std::invalid_argument("synthetic spec: class_sep must be >= 0");
  }
  if (spec.noise_sd < 0.0) {
    throw std::invalid_argument("synthetic spec: noise_sd must be >= 0");
  }

  Rng rng = Rng::stream("synthetic", {seed});
  Dataset ds;
  ds.task = spec.task;
  ds.name = spec.task == Task::binary_classification ? "synth-cls" : "synth-reg";
  ds.features = Matrix(spec.n, spec.d);
  ds.ids.reserve(spec.n);
  ds.targets.reserve(spec.n);

  std::vector<double> direction(spec.d);
  double norm2 = 0.0;
  for (double& v : direction) {
    v = rng.normal();
    norm2 += v * v;
  }
  double norm = std::sqrt(norm2);
  if (norm == 0.0) norm = 1.0;

  char idbuf[32];
  for (std::size_t i = 0; i < spec.n; ++i) {
    std::snprintf(idbuf, sizeof(idbuf), "synth-%06zu", i);
    ds.ids.emplace_back(idbuf);
    if (spec.task == Task::binary_classification) {
      const double label = static_cast<double>(i % 2);
      const double shift = (label > 0.5 ? 0.5 : -0.5) * spec.class_sep;
      for (std::size_t j = 0; j < spec.d; ++j) {
        ds.features(i, j) = rng.normal() + shift * direction[j] / norm;
      }
      ds.targets.push_back(label);
    } else {
      double dot = 0.0;
      for (std::size_t j = 0; j < spec.d; ++j) {
        double x = rng.normal();
        ds.features(i, j) = x;
        dot += x * direction[j] / norm;
      }
      ds.targets.push_back(dot + spec.noise_sd * rng.normal());
    }
  }
  return ds;
}

}  // namespace churnkit
