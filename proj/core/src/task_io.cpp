#include "survpfn/task_io.hpp"

#include <cmath>
#include <fstream>

#include "binio.hpp"
#include "json.hpp"
#include "survpfn/errors.hpp"

namespace survpfn {

namespace {

using json = nlohmann::ordered_json;

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

Matrix matrix_from(const json& j, std::size_t cols) {
  Matrix m(0, cols);
  for (const auto& row : j) {
    const auto v = row.get<std::vector<double>>();
    if (v.size() != cols) throw DataError("task: ragged covariate row");
    m.push_row(v);
  }
  return m;
}

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw DataError(std::string("task: non-finite value in ") + what);
}

void check_task(const TaskSample& t) {
  t.context.validate();
  if (t.context_event_latent.size() != t.n_context() ||
      t.context_censor_latent.size() != t.n_context())
    throw DataError("task: context latent length mismatch");
  if (t.query_event.size() != t.n_query() || t.query_censor.size() != t.n_query())
    throw DataError("task: query latent length mismatch");
  if (t.query_x.rows() > 0 && t.query_x.cols() != t.context.x.cols())
    throw DataError("task: query width differs from context width");
}

}  // namespace

std::string task_to_json(const TaskSample& t) {
  require_finite(t.context.x.data(), "context x");
  require_finite(t.query_x.data(), "query x");
  require_finite(t.context_event_latent, "latents");
  require_finite(t.context_censor_latent, "latents");
  require_finite(t.query_event, "latents");
  require_finite(t.query_censor, "latents");
  const auto& s = t.summary;
  json j;
  j["summary"] = {{"family", to_string(s.family)},
                  {"from_kitchen_sink", s.from_kitchen_sink},
                  {"censoring", to_string(s.censoring)},
                  {"dim", s.dim},
                  {"target_censoring_rate", s.target_censoring_rate},
                  {"censor_scale", s.censor_scale},
                  {"t_max", s.t_max},
                  {"seed", s.seed}};
  j["context"] = {{"x", matrix_json(t.context.x)},
                  {"time", t.context.time},
                  {"event", t.context.event},
                  {"event_latent", t.context_event_latent},
                  {"censor_latent", t.context_censor_latent}};
  j["query"] = {{"x", matrix_json(t.query_x)},
                {"event_latent", t.query_event},
                {"censor_latent", t.query_censor}};
  return j.dump();
}

TaskSample task_from_json(const std::string& line) {
  TaskSample t;
  try {
    const json j = json::parse(line);
    const auto& s = j.at("summary");
    t.summary.family = prior_family_from_string(s.at("family").get<std::string>());
    t.summary.from_kitchen_sink = s.at("from_kitchen_sink").get<bool>();
    t.summary.censoring = censoring_from_string(s.at("censoring").get<std::string>());
    t.summary.dim = s.at("dim").get<std::size_t>();
    t.summary.target_censoring_rate = s.at("target_censoring_rate").get<double>();
    t.summary.censor_scale = s.at("censor_scale").get<double>();
    t.summary.t_max = s.at("t_max").get<double>();
    t.summary.seed = s.at("seed").get<std::uint64_t>();
    const auto& c = j.at("context");
    t.context.x = matrix_from(c.at("x"), t.summary.dim);
    t.context.time = c.at("time").get<std::vector<double>>();
    t.context.event = c.at("event").get<std::vector<int>>();
    t.context_event_latent = c.at("event_latent").get<std::vector<double>>();
    t.context_censor_latent = c.at("censor_latent").get<std::vector<double>>();
    const auto& q = j.at("query");
    t.query_x = matrix_from(q.at("x"), t.summary.dim);
    t.query_event = q.at("event_latent").get<std::vector<double>>();
    t.query_censor = q.at("censor_latent").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw DataError(std::string("task: malformed JSON: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("task: ") + e.what());
  }
  check_task(t);
  return t;
}

void write_tasks_jsonl(const std::string& path, std::span<const TaskSample> tasks) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& t : tasks) out << task_to_json(t) << '\n';
  if (!out) throw DataError("failed writing " + path);
}

std::vector<TaskSample> read_tasks_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<TaskSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(task_from_json(line));
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

namespace {

constexpr char kTaskMagic[8] = {'S', 'P', 'F', 'N', 'T', 'A', 'S', 'K'};

void write_matrix(detail::ByteWriter& w, const Matrix& m) {
  w.u64(m.rows());
  w.u64(m.cols());
  w.bytes(m.data().data(), m.data().size() * 8);
}

Matrix read_matrix(detail::ByteReader& r) {
  const std::uint64_t rows = r.u64(), cols = r.u64();
  if (cols != 0 && rows > (std::uint64_t{1} << 40) / cols) throw DataError("task file: matrix too large");
  Matrix m(rows, cols);
  r.bytes(m.data().data(), rows * cols * 8);
  return m;
}

}  // namespace

std::vector<unsigned char> serialize_tasks(std::span<const TaskSample> tasks) {
  detail::ByteWriter w;
  w.bytes(kTaskMagic, 8);
  w.u32(kTaskFileVersion);
  w.u32(0);
  w.u64(tasks.size());
  for (const auto& t : tasks) {
    check_task(t);
    const auto& s = t.summary;
    w.u8(static_cast<std::uint8_t>(s.family));
    w.u8(s.from_kitchen_sink ? 1 : 0);
    w.u8(static_cast<std::uint8_t>(s.censoring));
    w.u64(s.dim);
    w.f64(s.target_censoring_rate);
    w.f64(s.censor_scale);
    w.f64(s.t_max);
    w.u64(s.seed);
    write_matrix(w, t.context.x);
    w.f64s(t.context.time);
    w.u64(t.context.event.size());
    for (int e : t.context.event) w.u8(static_cast<std::uint8_t>(e));
    w.f64s(t.context_event_latent);
    w.f64s(t.context_censor_latent);
    write_matrix(w, t.query_x);
    w.f64s(t.query_event);
    w.f64s(t.query_censor);
  }
  return std::move(w.buffer());
}

std::vector<TaskSample> deserialize_tasks(std::span<const unsigned char> bytes) {
  detail::ByteReader r(bytes, "task file");
  char magic[8];
  r.bytes(magic, 8);
  if (!std::equal(magic, magic + 8, kTaskMagic)) throw DataError("task file: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kTaskFileVersion)
    throw DataError("task file: unsupported version " + std::to_string(version));
  if (r.u32() != 0) throw DataError("task file: unknown flags");
  const std::uint64_t n = r.u64();
  std::vector<TaskSample> out;
  for (std::uint64_t k = 0; k < n; ++k) {
    TaskSample t;
    auto& s = t.summary;
    const std::uint8_t fam = r.u8();
    if (fam > static_cast<std::uint8_t>(PriorFamily::exponential))
      throw DataError("task file: unknown prior family");
    s.family = static_cast<PriorFamily>(fam);
    s.from_kitchen_sink = r.u8() != 0;
    const std::uint8_t cens = r.u8();
    if (cens > static_cast<std::uint8_t>(CensoringKind::conditional_independent))
      throw DataError("task file: unknown censoring kind");
    s.censoring = static_cast<CensoringKind>(cens);
    s.dim = r.u64();
    s.target_censoring_rate = r.f64();
    s.censor_scale = r.f64();
    s.t_max = r.f64();
    s.seed = r.u64();
    t.context.x = read_matrix(r);
    t.context.time = r.f64s();
    const std::uint64_t ne = r.u64();
    if (ne != t.context.time.size()) throw DataError("task file: event count mismatch");
    for (std::uint64_t i = 0; i < ne; ++i) t.context.event.push_back(r.u8());
    t.context_event_latent = r.f64s();
    t.context_censor_latent = r.f64s();
    t.query_x = read_matrix(r);
    t.query_event = r.f64s();
    t.query_censor = r.f64s();
    check_task(t);
    out.push_back(std::move(t));
  }
  if (!r.done()) throw DataError("task file: trailing bytes");
  return out;
}

void write_tasks_binary(const std::string& path, std::span<const TaskSample> tasks) {
  detail::write_file(path, serialize_tasks(tasks));
}

std::vector<TaskSample> read_tasks_binary(const std::string& path) {
  return deserialize_tasks(detail::read_file(path));
}

}  // namespace survpfn
