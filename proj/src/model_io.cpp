#include <cstring>
#include <fstream>

#include "rallyproc/transitions.hpp"

// Little-endian, fixed-width binary layouts; see docs/formats.md.

namespace rallyproc {

namespace {

constexpr char kTransMagic[8] = {'R', 'P', 'T', 'R', 'A', 'N', 'S', '1'};
constexpr char kDistMagic[8] = {'R', 'P', 'D', 'I', 'S', 'T', 'S', '1'};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw Error("cannot write " + path.string());
  }
  template <class T>
  void put(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }
  void hash(const std::string& h) {
    char buf[16] = {};
    std::memcpy(buf, h.data(), std::min<std::size_t>(16, h.size()));
    bytes(buf, 16);
  }
  void close() {
    out_.close();
    if (!out_) throw Error("failed writing " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw Error("cannot open " + path.string());
  }
  template <class T>
  T get() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) throw Error("truncated file " + path_.string());
    return v;
  }
  void expect_magic(const char (&magic)[8]) {
    char buf[8];
    in_.read(buf, 8);
    if (!in_ || std::memcmp(buf, magic, 8) != 0) throw Error(path_.string() + ": bad magic");
  }
  std::string hash() {
    char buf[16];
    in_.read(buf, 16);
    if (!in_) throw Error("truncated file " + path_.string());
    std::string h(buf, 16);
    h.erase(h.find_last_not_of('\0') + 1);
    return h;
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace

std::string transitions_file_name(int eps) { return "transitions.eps" + std::to_string(eps) + ".v1"; }

void write_transitions(const TransitionModel& model, const std::filesystem::path& path) {
  Writer w(path);
  w.bytes(kTransMagic, 8);
  w.put<std::uint32_t>(1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.eps.value));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.eps.max));
  w.hash(model.census_hash);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.num_transient));
  std::uint64_t rows = 0, records = 0;
  for (const auto& s : model.states) {
    rows += s->actions.size();
    for (const auto& r : s->actions) records += r.entries.size();
  }
  w.put<std::uint64_t>(rows);
  w.put<std::uint64_t>(records);
  for (StateId s = 0; s < model.num_transient; ++s) {
    for (const auto& r : model.states[s]->actions) {
      w.put<std::uint32_t>(s);
      w.put<std::uint16_t>(r.action.value);
      w.put<std::uint32_t>(r.samples);
      w.put<std::uint32_t>(static_cast<std::uint32_t>(r.entries.size()));
    }
  }
  for (StateId s = 0; s < model.num_transient; ++s) {
    for (const auto& r : model.states[s]->actions) {
      for (const auto& t : r.entries) {
        w.put<std::uint32_t>(s);
        w.put<std::uint16_t>(r.action.value);
        w.put<std::uint32_t>(t.next);
        w.put<double>(t.prob);
        w.put<std::uint8_t>(static_cast<std::uint8_t>(t.tag));
      }
    }
  }
  w.close();
}

TransitionModel read_transitions(const std::filesystem::path& path) {
  Reader r(path);
  r.expect_magic(kTransMagic);
  if (r.get<std::uint32_t>() != 1) throw Error(path.string() + ": unsupported version");
  const auto eps = static_cast<int>(r.get<std::uint32_t>());
  const auto eps_max = static_cast<int>(r.get<std::uint32_t>());
  TransitionModel model;
  model.eps = Epsilon(eps, eps_max);
  model.census_hash = r.hash();
  model.num_transient = r.get<std::uint32_t>();
  const auto rows = r.get<std::uint64_t>();
  const auto records = r.get<std::uint64_t>();
  std::vector<StateRows> built(model.num_transient);
  std::vector<std::pair<ActionRow*, std::uint32_t>> order;
  order.reserve(rows);
  for (std::uint64_t i = 0; i < rows; ++i) {
    const auto s = r.get<std::uint32_t>();
    if (s >= model.num_transient) throw Error(path.string() + ": state id out of range");
    ActionRow row;
    row.action = ActionId{r.get<std::uint16_t>()};
    row.samples = r.get<std::uint32_t>();
    const auto count = r.get<std::uint32_t>();
    row.entries.reserve(count);
    built[s].actions.push_back(std::move(row));
    order.push_back({nullptr, count});
  }
  // Pointers are taken after all rows are in place.
  std::size_t idx = 0;
  for (auto& s : built)
    for (auto& row : s.actions) order[idx++].first = &row;
  std::uint64_t seen = 0;
  for (auto& [row, count] : order) {
    for (std::uint32_t k = 0; k < count; ++k) {
      r.get<std::uint32_t>();
      r.get<std::uint16_t>();
      Transition t;
      t.next = r.get<std::uint32_t>();
      t.prob = r.get<double>();
      t.tag = static_cast<OutcomeTag>(r.get<std::uint8_t>());
      row->entries.push_back(t);
      ++seen;
    }
  }
  if (seen != records) throw Error(path.string() + ": record count mismatch");
  for (auto& s : built) model.states.push_back(std::make_shared<const StateRows>(std::move(s)));
  model.validate();
  return model;
}

void write_distributions(const DistributionSet& dists, const std::filesystem::path& path) {
  Writer w(path);
  w.bytes(kDistMagic, 8);
  w.put<std::uint32_t>(1);
  w.hash(dists.census_hash);
  w.put<std::uint64_t>(dists.seed);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dists.fit_samples));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dists.states.size()));
  for (const auto& sd : dists.states) {
    const State& s = sd.intention.state;
    w.put<std::uint8_t>(static_cast<std::uint8_t>(s.sigma_a));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(s.sigma_b));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(s.omega));
    w.put<std::uint16_t>(static_cast<std::uint16_t>(sd.intention.actions.size()));
    for (std::size_t k = 0; k < sd.intention.actions.size(); ++k) {
      const auto& e = sd.execs[k];
      w.put<std::uint16_t>(sd.intention.actions[k].value);
      w.put<double>(sd.intention.probs[k]);
      w.put<double>(e.mean.x);
      w.put<double>(e.mean.y);
      w.put<double>(e.cov.xx);
      w.put<double>(e.cov.xy);
      w.put<double>(e.cov.yy);
      w.put<double>(e.scale_c);
      w.put<std::uint8_t>(e.fallback ? 1 : 0);
    }
  }
  w.close();
}

DistributionSet read_distributions(const std::filesystem::path& path) {
  Reader r(path);
  r.expect_magic(kDistMagic);
  if (r.get<std::uint32_t>() != 1) throw Error(path.string() + ": unsupported version");
  DistributionSet d;
  d.census_hash = r.hash();
  d.seed = r.get<std::uint64_t>();
  d.fit_samples = static_cast<int>(r.get<std::uint32_t>());
  const auto n = r.get<std::uint32_t>();
  d.states.resize(n);
  for (auto& sd : d.states) {
    const int a = r.get<std::uint8_t>();
    const int b = r.get<std::uint8_t>();
    const auto w = static_cast<ShotType>(r.get<std::uint8_t>());
    sd.intention.state = State::transient(a, b, w);
    const auto k = r.get<std::uint16_t>();
    for (std::uint16_t i = 0; i < k; ++i) {
      ExecutionDistribution e;
      e.region = ActionId{r.get<std::uint16_t>()};
      sd.intention.actions.push_back(e.region);
      sd.intention.probs.push_back(r.get<double>());
      e.mean.x = r.get<double>();
      e.mean.y = r.get<double>();
      e.cov.xx = r.get<double>();
      e.cov.xy = r.get<double>();
      e.cov.yy = r.get<double>();
      e.scale_c = r.get<double>();
      e.fallback = r.get<std::uint8_t>() != 0;
      sd.execs.push_back(e);
    }
  }
  return d;
}

}  // namespace rallyproc
