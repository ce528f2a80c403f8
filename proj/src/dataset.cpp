#include "rulex/dataset.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "rulex/checkpoint.hpp"
#include "rulex/error.hpp"

namespace rulex {

namespace {

constexpr char kMagic[4] = {'R', 'X', 'S', 'Q'};
constexpr std::uint32_t kBinaryVersion = 1;

nlohmann::json class_json(const StimulusClass& c) { return nlohmann::json::array({c.slot1, c.slot2}); }

StimulusClass class_from_json(const nlohmann::json& j) {
  require(j.is_array() && j.size() == 2, ErrorKind::Io, "dataset: class must be a 2-element array");
  return {j[0].get<std::size_t>(), j[1].get<std::size_t>()};
}

void put_u32(std::ostream& os, std::uint64_t v) {
  require(v <= 0xffffffffull, ErrorKind::Io, "dataset: value does not fit in uint32");
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  require(is.gcount() == 4, ErrorKind::Io, "dataset: truncated binary file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint32_t regime_code(Regime r) { return static_cast<std::uint32_t>(r); }

Regime regime_from_code(std::uint32_t c) {
  require(c <= static_cast<std::uint32_t>(Regime::RulePretrain), ErrorKind::Io,
          "dataset: unknown regime code " + std::to_string(c));
  return static_cast<Regime>(c);
}

}  // namespace

nlohmann::json to_json(const PartialExposureSpec& s) {
  return {{"a", s.a},
          {"b", s.b},
          {"x", s.x},
          {"w", s.w},
          {"extra", class_json(s.extra)},
          {"label_a", s.label_a},
          {"label_b", s.label_b},
          {"label_extra", s.label_extra},
          {"control", s.control}};
}

PartialExposureSpec spec_from_json(const nlohmann::json& j) {
  PartialExposureSpec s;
  try {
    s.a = j.at("a").get<std::size_t>();
    s.b = j.at("b").get<std::size_t>();
    s.x = j.at("x").get<std::size_t>();
    s.w = j.at("w").get<std::size_t>();
    s.extra = class_from_json(j.at("extra"));
    s.label_a = j.at("label_a").get<std::size_t>();
    s.label_b = j.at("label_b").get<std::size_t>();
    s.label_extra = j.at("label_extra").get<std::size_t>();
    s.control = j.at("control").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Io, std::string("dataset: bad spec: ") + e.what());
  }
  return s;
}

nlohmann::json to_json(const SequenceExample& ex) {
  nlohmann::json ctx = nlohmann::json::array();
  for (const auto& it : ex.context)
    ctx.push_back({{"class", class_json(it.cls)}, {"label", it.label}, {"stimulus", it.stimulus}});
  return {{"regime", to_string(ex.regime)},
          {"spec", ex.spec ? to_json(*ex.spec) : nlohmann::json(nullptr)},
          {"context", ctx},
          {"query_class", class_json(ex.query_class)},
          {"query", ex.query},
          {"target", ex.target}};
}

SequenceExample sequence_from_json(const nlohmann::json& j) {
  SequenceExample ex;
  try {
    ex.regime = regime_from_string(j.at("regime").get<std::string>());
    if (!j.at("spec").is_null()) ex.spec = spec_from_json(j.at("spec"));
    for (const auto& it : j.at("context"))
      ex.context.push_back({class_from_json(it.at("class")), it.at("stimulus").get<std::vector<float>>(),
                            it.at("label").get<std::size_t>()});
    ex.query_class = class_from_json(j.at("query_class"));
    ex.query = j.at("query").get<std::vector<float>>();
    ex.target = j.at("target").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Io, std::string("dataset: bad record: ") + e.what());
  }
  return ex;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<SequenceExample>& examples) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  for (const auto& ex : examples) out << to_json(ex).dump() << '\n';
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path.string());
}

std::vector<SequenceExample> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  std::vector<SequenceExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    require(!j.is_discarded(), ErrorKind::Io, path.string() + ":" + std::to_string(lineno) + ": invalid JSON");
    out.push_back(sequence_from_json(j));
  }
  return out;
}

void write_binary(const std::filesystem::path& path, const std::vector<SequenceExample>& examples) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  const std::size_t dim = examples.empty() ? 0 : examples.front().query.size();
  out.write(kMagic, 4);
  put_u32(out, kBinaryVersion);
  put_u32(out, examples.size());
  put_u32(out, dim);
  for (const auto& ex : examples) {
    require(ex.query.size() == dim, ErrorKind::Io, "dataset: mixed stimulus lengths");
    put_u32(out, regime_code(ex.regime));
    put_u32(out, ex.spec ? 1 : 0);
    if (ex.spec) {
      const auto& s = *ex.spec;
      for (std::size_t v : {s.a, s.b, s.x, s.w, s.extra.slot1, s.extra.slot2, s.label_a, s.label_b, s.label_extra})
        put_u32(out, v);
      put_u32(out, s.control ? 1 : 0);
    }
    put_u32(out, ex.context.size());
    for (const auto& it : ex.context) {
      require(it.stimulus.size() == dim, ErrorKind::Io, "dataset: mixed stimulus lengths");
      put_u32(out, it.cls.slot1);
      put_u32(out, it.cls.slot2);
      put_u32(out, it.label);
      write_f32_le(out, it.stimulus);
    }
    put_u32(out, ex.query_class.slot1);
    put_u32(out, ex.query_class.slot2);
    write_f32_le(out, ex.query);
    put_u32(out, ex.target);
  }
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path.string());
}

std::vector<SequenceExample> read_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  require(in.gcount() == 4 && std::memcmp(magic, kMagic, 4) == 0, ErrorKind::Io, path.string() + ": not a RXSQ file");
  const auto version = get_u32(in);
  require(version == kBinaryVersion, ErrorKind::Io, path.string() + ": unsupported version " + std::to_string(version));
  const auto count = get_u32(in);
  const auto dim = get_u32(in);
  std::vector<SequenceExample> out;
  out.reserve(count);
  for (std::uint32_t r = 0; r < count; ++r) {
    SequenceExample ex;
    ex.regime = regime_from_code(get_u32(in));
    if (get_u32(in)) {
      PartialExposureSpec s;
      s.a = get_u32(in);
      s.b = get_u32(in);
      s.x = get_u32(in);
      s.w = get_u32(in);
      s.extra.slot1 = get_u32(in);
      s.extra.slot2 = get_u32(in);
      s.label_a = get_u32(in);
      s.label_b = get_u32(in);
      s.label_extra = get_u32(in);
      s.control = get_u32(in) != 0;
      ex.spec = s;
    }
    const auto n = get_u32(in);
    for (std::uint32_t i = 0; i < n; ++i) {
      ContextItem it;
      it.cls.slot1 = get_u32(in);
      it.cls.slot2 = get_u32(in);
      it.label = get_u32(in);
      it.stimulus.resize(dim);
      read_f32_le(in, it.stimulus);
      ex.context.push_back(std::move(it));
    }
    ex.query_class.slot1 = get_u32(in);
    ex.query_class.slot2 = get_u32(in);
    ex.query.resize(dim);
    read_f32_le(in, ex.query);
    ex.target = get_u32(in);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace rulex
