#include "rblod/array_io.hpp"
#include "rblod/errors.hpp"
#include "rblod/rboffline.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace rblod {

namespace fs = std::filesystem;

namespace {

constexpr int kFormatVersion = 1;

Array vector_array(const std::vector<double>& v) { return Array{{v.size()}, v}; }

Array index_array(const std::vector<int>& v) { return Array{{v.size()}, {v.begin(), v.end()}}; }

// Column-major payload, extents [cols, rows].
Array matrix_array(const DenseMatrix& m) {
  Array a;
  a.extents = {static_cast<std::uint64_t>(m.cols()), static_cast<std::uint64_t>(m.rows())};
  a.data.assign(m.data(), m.data() + m.size());
  return a;
}

void append(std::vector<double>& flat, const DenseMatrix& m) { flat.insert(flat.end(), m.data(), m.data() + m.size()); }

void append(std::vector<double>& flat, const Vector& v) { flat.insert(flat.end(), v.data(), v.data() + v.size()); }

Array read_shaped(const fs::path& path, std::size_t ndim) {
  Array a = read_array(path);
  if (a.extents.size() != ndim) throw FormatError("unexpected dimension count in " + path.string());
  return a;
}

std::vector<double> read_vector(const fs::path& path) { return read_shaped(path, 1).data; }

std::vector<int> read_indices(const fs::path& path) {
  std::vector<int> out;
  for (double v : read_vector(path)) {
    if (v != std::floor(v) || v < 0 || v > 2e9) throw FormatError("non-integer index in " + path.string());
    out.push_back(static_cast<int>(v));
  }
  return out;
}

DenseMatrix read_matrix(const fs::path& path) {
  const Array a = read_shaped(path, 2);
  return Eigen::Map<const DenseMatrix>(a.data.data(), static_cast<Eigen::Index>(a.extents[1]),
                                       static_cast<Eigen::Index>(a.extents[0]));
}

// Sequential reader over a flat array with a clear error on overrun.
class FlatReader {
 public:
  FlatReader(std::vector<double> data, fs::path path) : data_(std::move(data)), path_(std::move(path)) {}

  DenseMatrix matrix(Eigen::Index rows, Eigen::Index cols) {
    take(rows * cols);
    return Eigen::Map<const DenseMatrix>(data_.data() + pos_ - rows * cols, rows, cols);
  }

  Vector vector(Eigen::Index n) {
    take(n);
    return Eigen::Map<const Vector>(data_.data() + pos_ - n, n);
  }

  double scalar() { return vector(1)[0]; }

  void finish() const {
    if (pos_ != data_.size()) throw InconsistentDatabaseError("trailing data in " + path_.string());
  }

 private:
  void take(Eigen::Index n) {
    if (n < 0 || pos_ + static_cast<std::size_t>(n) > data_.size()) {
      throw InconsistentDatabaseError("array too short: " + path_.string());
    }
    pos_ += static_cast<std::size_t>(n);
  }

  std::vector<double> data_;
  fs::path path_;
  std::size_t pos_ = 0;
};

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void write_manifest(const fs::path& path, const OfflineManifest& m) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "format_version=" << kFormatVersion << "\n"
      << "problem=" << m.problem_id << "\n"
      << "n_coarse=" << m.n_coarse << "\n"
      << "levels=" << m.levels << "\n"
      << "k=" << m.k << "\n"
      << "seed=" << m.seed << "\n"
      << "tol=" << format_double(m.tol) << "\n"
      << "train_size=" << m.train_size << "\n"
      << "j_max=" << m.j_max << "\n"
      << "mu1=" << format_double(m.mu1) << "\n"
      << "alpha_mode=" << to_string(m.alpha_mode) << "\n"
      << "alpha=" << format_double(m.alpha) << "\n"
      << "q_count=" << m.q_count << "\n"
      << "node_count=" << m.node_count << "\n"
      << "epsilon=" << format_double(m.epsilon) << "\n"
      << "mu_lower=" << format_double(m.mu_lower) << "\n"
      << "mu_upper=" << format_double(m.mu_upper) << "\n";
  if (!out) throw Error("failed writing " + path.string());
}

OfflineManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IncompatibleDatabaseError("missing manifest " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IncompatibleDatabaseError("malformed manifest line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw IncompatibleDatabaseError("manifest lacks key '" + key + "'");
    return it->second;
  };
  auto to_int = [&](const std::string& key) {
    try {
      return std::stoi(get(key));
    } catch (const std::logic_error&) {
      throw IncompatibleDatabaseError("manifest key '" + key + "' is not an integer");
    }
  };
  auto to_double = [&](const std::string& key) {
    try {
      return std::stod(get(key));
    } catch (const std::logic_error&) {
      throw IncompatibleDatabaseError("manifest key '" + key + "' is not a number");
    }
  };
  if (to_int("format_version") != kFormatVersion) {
    throw IncompatibleDatabaseError("unsupported database format version " + get("format_version"));
  }
  OfflineManifest m;
  m.problem_id = get("problem");
  m.n_coarse = to_int("n_coarse");
  m.levels = to_int("levels");
  m.k = to_int("k");
  try {
    m.seed = std::stoull(get("seed"));
  } catch (const std::logic_error&) {
    throw IncompatibleDatabaseError("manifest key 'seed' is not an integer");
  }
  m.tol = to_double("tol");
  m.train_size = to_int("train_size");
  m.j_max = to_int("j_max");
  m.mu1 = to_double("mu1");
  try {
    m.alpha_mode = parse_alpha_mode(get("alpha_mode"));
  } catch (const std::invalid_argument& e) {
    throw IncompatibleDatabaseError(e.what());
  }
  m.alpha = to_double("alpha");
  m.q_count = to_int("q_count");
  m.node_count = to_int("node_count");
  m.epsilon = to_double("epsilon");
  m.mu_lower = to_double("mu_lower");
  m.mu_upper = to_double("mu_upper");
  if (m.q_count < 1 || m.node_count < 0) throw IncompatibleDatabaseError("manifest sizes are invalid");
  return m;
}

void save_space(const LocalRBSpace& s, const fs::path& dir) {
  fs::create_directories(dir);
  write_array(dir / "meta.bin", vector_array(std::vector<double>{static_cast<double>(s.node), s.converged ? 1.0 : 0.0,
                                                                 static_cast<double>(s.rejected), s.c_z, s.hat_energy}));
  write_array(dir / "parameters.bin", vector_array(s.parameters));
  Array history{{s.history.size(), 2}, {}};
  for (const auto& h : s.history) {
    history.data.push_back(h.parameter);
    history.data.push_back(h.max_estimate);
  }
  write_array(dir / "history.bin", history);
  write_array(dir / "support.bin", index_array(s.support));
  write_array(dir / "region.bin", index_array(s.region_elements));
  write_array(dir / "basis.bin", matrix_array(s.basis));
  std::vector<double> d, f;
  for (const auto& m : s.D) append(d, m);
  for (const auto& v : s.F) append(f, v);
  write_array(dir / "D.bin", vector_array(d));
  write_array(dir / "F.bin", vector_array(f));

  Array dims{{s.pieces.size(), 3}, {}};
  std::vector<double> matrix, load, riesz;
  for (const auto& p : s.pieces) {
    dims.data.push_back(p.element);
    dims.data.push_back(p.rank);
    dims.data.push_back(static_cast<double>(p.riesz_factor.rows()));
    for (const auto& m : p.matrix) append(matrix, m);
    for (const auto& v : p.load) append(load, v);
    append(riesz, p.riesz_factor);
  }
  write_array(dir / "piece_dims.bin", dims);
  write_array(dir / "piece_matrix.bin", vector_array(matrix));
  write_array(dir / "piece_load.bin", vector_array(load));
  write_array(dir / "piece_riesz.bin", vector_array(riesz));
}

LocalRBSpace load_space(const fs::path& dir, int q_count) {
  LocalRBSpace s;
  const auto meta = read_vector(dir / "meta.bin");
  if (meta.size() != 5) throw InconsistentDatabaseError("bad node metadata in " + dir.string());
  s.node = static_cast<int>(meta[0]);
  s.converged = meta[1] != 0.0;
  s.rejected = static_cast<int>(meta[2]);
  s.c_z = meta[3];
  s.hat_energy = meta[4];
  s.parameters = read_vector(dir / "parameters.bin");
  const Array history = read_shaped(dir / "history.bin", 2);
  if (history.extents[1] != 2) throw InconsistentDatabaseError("bad greedy history in " + dir.string());
  for (std::size_t i = 0; i < history.extents[0]; ++i) s.history.push_back({history.data[2 * i], history.data[2 * i + 1]});
  s.support = read_indices(dir / "support.bin");
  s.region_elements = read_indices(dir / "region.bin");
  s.basis = read_matrix(dir / "basis.bin");
  const int j = s.dimension();
  if (s.basis.rows() != static_cast<Eigen::Index>(s.support.size()) || s.basis.cols() != j) {
    throw InconsistentDatabaseError("node basis does not match support or dimension in " + dir.string());
  }
  FlatReader d(read_vector(dir / "D.bin"), dir / "D.bin");
  FlatReader f(read_vector(dir / "F.bin"), dir / "F.bin");
  for (int q = 0; q < q_count; ++q) {
    s.D.push_back(d.matrix(j, j));
    s.F.push_back(f.vector(j));
  }
  d.finish();
  f.finish();

  const Array dims = read_shaped(dir / "piece_dims.bin", 2);
  if (dims.extents[1] != 3) throw InconsistentDatabaseError("bad piece table in " + dir.string());
  FlatReader matrix(read_vector(dir / "piece_matrix.bin"), dir / "piece_matrix.bin");
  FlatReader load(read_vector(dir / "piece_load.bin"), dir / "piece_load.bin");
  FlatReader riesz(read_vector(dir / "piece_riesz.bin"), dir / "piece_riesz.bin");
  for (std::size_t p = 0; p < dims.extents[0]; ++p) {
    ElementPiece piece;
    piece.element = static_cast<int>(dims.data[3 * p]);
    piece.rank = static_cast<int>(dims.data[3 * p + 1]);
    const auto rows = static_cast<Eigen::Index>(dims.data[3 * p + 2]);
    for (int q = 0; q < q_count; ++q) piece.matrix.push_back(matrix.matrix(piece.rank, piece.rank));
    for (int q = 0; q < q_count; ++q) piece.load.push_back(load.vector(piece.rank));
    piece.riesz_factor = riesz.matrix(rows, piece.riesz_columns());
    s.pieces.push_back(std::move(piece));
  }
  matrix.finish();
  load.finish();
  riesz.finish();
  return s;
}

void write_staging(const OfflineDB& db, const fs::path& staging) {
  fs::create_directories(staging / "nodes");
  write_manifest(staging / "manifest.txt", db.manifest);
  write_array(staging / "training.bin", vector_array(db.training));
  for (std::size_t i = 0; i < db.spaces.size(); ++i) save_space(db.spaces[i], staging / "nodes" / std::to_string(i));

  Array index{{db.pairs.size(), 2}, {}};
  std::vector<double> s, r, m;
  for (const auto& p : db.pairs) {
    index.data.push_back(p.n);
    index.data.push_back(p.m);
    for (std::size_t q = 0; q < p.s.size(); ++q) {
      s.push_back(p.s[q]);
      append(r, p.r_nm[q]);
      append(r, p.r_mn[q]);
      append(m, p.M[q]);
    }
  }
  write_array(staging / "pairs.bin", index);
  write_array(staging / "pair_s.bin", vector_array(s));
  write_array(staging / "pair_r.bin", vector_array(r));
  write_array(staging / "pair_M.bin", vector_array(m));
}

}  // namespace

void save_offline(const OfflineDB& db, const fs::path& path) {
  const fs::path target = fs::absolute(path);
  const fs::path staging = target.string() + ".partial";
  fs::remove_all(staging);
  try {
    write_staging(db, staging);
  } catch (...) {
    std::error_code ignored;
    fs::remove_all(staging, ignored);
    throw;
  }
  fs::remove_all(target);
  fs::rename(staging, target);
}

OfflineDB load_offline(const fs::path& path) {
  if (!fs::is_directory(path)) throw IncompatibleDatabaseError("offline database not found: " + path.string());
  OfflineDB db;
  db.manifest = read_manifest(path / "manifest.txt");
  const int nq = db.manifest.q_count;
  db.training = read_vector(path / "training.bin");
  if (static_cast<int>(db.training.size()) != db.manifest.train_size) {
    throw InconsistentDatabaseError("training set size differs from the manifest");
  }
  for (int i = 0; i < db.manifest.node_count; ++i) {
    db.spaces.push_back(load_space(path / "nodes" / std::to_string(i), nq));
  }

  const Array index = read_shaped(path / "pairs.bin", 2);
  if (index.extents[1] != 2) throw InconsistentDatabaseError("bad pair index");
  FlatReader s(read_vector(path / "pair_s.bin"), path / "pair_s.bin");
  FlatReader r(read_vector(path / "pair_r.bin"), path / "pair_r.bin");
  FlatReader m(read_vector(path / "pair_M.bin"), path / "pair_M.bin");
  for (std::size_t p = 0; p < index.extents[0]; ++p) {
    NodePair pair;
    pair.n = static_cast<int>(index.data[2 * p]);
    pair.m = static_cast<int>(index.data[2 * p + 1]);
    if (pair.n < 0 || pair.m < pair.n || pair.m >= db.manifest.node_count) {
      throw InconsistentDatabaseError("pair index out of range");
    }
    const int jn = db.spaces[pair.n].dimension();
    const int jm = db.spaces[pair.m].dimension();
    for (int q = 0; q < nq; ++q) {
      pair.s.push_back(s.scalar());
      pair.r_nm.push_back(r.vector(jm));
      pair.r_mn.push_back(r.vector(jn));
      pair.M.push_back(m.matrix(jn, jm));
    }
    db.pairs.push_back(std::move(pair));
  }
  s.finish();
  r.finish();
  m.finish();
  return db;
}

}  // namespace rblod
