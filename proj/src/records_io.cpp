#include <limits>
#include <set>

#include <json.hpp>

#include "ctp/error.hpp"
#include "ctp/io.hpp"
#include "ctp/records.hpp"

namespace ctp {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

template <typename T>
T get_uint(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ValidationError(std::string("missing field '") + key + "'");
  if (!it->is_number_integer() || (it->is_number_integer() && !it->is_number_unsigned() &&
                                   it->get<std::int64_t>() < 0)) {
    throw ValidationError(std::string("field '") + key + "' must be a non-negative integer");
  }
  const auto v = it->get<std::uint64_t>();
  if (v > std::numeric_limits<T>::max()) {
    throw ValidationError(std::string("field '") + key + "' out of range");
  }
  return static_cast<T>(v);
}

std::vector<double> get_doubles(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ValidationError(std::string("missing field '") + key + "'");
  if (!it->is_array()) throw ValidationError(std::string("field '") + key + "' must be an array");
  std::vector<double> out;
  out.reserve(it->size());
  for (const auto& v : *it) {
    if (!v.is_number()) throw ValidationError(std::string("non-numeric entry in '") + key + "'");
    out.push_back(v.get<double>());
  }
  return out;
}

std::string meta_value(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

}  // namespace

DistributionRecord parse_record_line(std::string_view line) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("malformed JSON: ") + e.what());
  }
  if (!obj.is_object()) throw ValidationError("record line is not a JSON object");

  DistributionRecord r;
  r.seq_id = get_uint<std::uint64_t>(obj, "seq");
  r.pos = get_uint<std::uint64_t>(obj, "pos");
  r.gold = get_uint<TokenId>(obj, "gold");
  r.vocab_size = get_uint<std::uint32_t>(obj, "vocab");

  if (obj.contains("ids")) {
    SparseProbs s;
    const auto& ids = obj["ids"];
    if (!ids.is_array()) throw ValidationError("field 'ids' must be an array");
    s.ids.reserve(ids.size());
    for (const auto& v : ids) {
      if (!v.is_number_unsigned() || v.get<std::uint64_t>() > std::numeric_limits<TokenId>::max()) {
        throw ValidationError("field 'ids' must hold non-negative 32-bit integers");
      }
      s.ids.push_back(v.get<TokenId>());
    }
    s.probs = get_doubles(obj, "probs");
    auto tail = obj.find("tail");
    if (tail == obj.end()) throw ValidationError("sparse record missing field 'tail'");
    if (!tail->is_number()) throw ValidationError("field 'tail' must be a number");
    s.tail_mass = tail->get<double>();
    r.body = std::move(s);
  } else {
    r.body = DenseProbs{get_doubles(obj, "probs")};
  }
  return r;
}

std::string format_record_line(const DistributionRecord& r) {
  ordered_json obj;
  obj["seq"] = r.seq_id;
  obj["pos"] = r.pos;
  obj["gold"] = r.gold;
  obj["vocab"] = r.vocab_size;
  if (r.is_dense()) {
    obj["probs"] = r.dense().probs;
  } else {
    const auto& s = r.sparse();
    obj["ids"] = s.ids;
    obj["probs"] = s.probs;
    obj["tail"] = s.tail_mass;
  }
  return obj.dump();
}

RecordReader::RecordReader(const std::filesystem::path& path, ReadOptions opts)
    : path_(path), in_(path, std::ios::binary), opts_(opts) {
  if (!in_) throw UsageError("cannot open '" + path.string() + "'");
}

void RecordReader::reject(std::size_t line_no, const std::string& code, const std::string& detail) {
  if (opts_.mode == ReadMode::Strict) {
    throw ValidationError(path_.string() + ":" + std::to_string(line_no) + ": " + code + " " +
                          detail);
  }
  ++report_.dropped;
  ++report_.dropped_by_code[code];
}

std::optional<DistributionRecord> RecordReader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_no_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;

    if (line_no_ == 1 && line.find("\"meta\"") != std::string::npos) {
      json obj;
      try {
        obj = json::parse(line);
      } catch (const json::parse_error& e) {
        throw ValidationError(path_.string() + ":1: malformed JSON: " + e.what());
      }
      if (obj.is_object() && obj.size() == 1 && obj.contains("meta")) {
        if (!obj["meta"].is_object()) {
          throw ValidationError(path_.string() + ":1: 'meta' must be an object");
        }
        for (const auto& [k, v] : obj["meta"].items()) meta_[k] = meta_value(v);
        continue;
      }
    }

    ++report_.lines;
    DistributionRecord r;
    try {
      r = parse_record_line(line);
    } catch (const ValidationError& e) {
      // Structural damage is never silently dropped.
      throw ValidationError(path_.string() + ":" + std::to_string(line_no_) + ": " + e.what());
    }
    if (vocab_ && *vocab_ != r.vocab_size) {
      throw ValidationError(path_.string() + ":" + std::to_string(line_no_) +
                            ": vocab_size mismatch (" + std::to_string(r.vocab_size) + " vs " +
                            std::to_string(*vocab_) + ")");
    }
    vocab_ = r.vocab_size;

    auto violations = validate_record(r, opts_.eps);
    if (!violations.empty()) {
      // A dropped row is counted once, under its first violation.
      reject(line_no_, std::string(code_name(violations.front().code)),
             violations.front().detail);
      continue;
    }
    ++report_.kept;
    return r;
  }
  return std::nullopt;
}

Dataset read_dataset(const std::filesystem::path& path, ReadOptions opts, ReadReport* report) {
  RecordReader reader(path, opts);
  Dataset ds;
  std::set<std::pair<std::uint64_t, std::uint64_t>> keys;
  std::size_t dup_dropped = 0;
  while (auto r = reader.next()) {
    if (!keys.emplace(r->seq_id, r->pos).second) {
      if (opts.mode == ReadMode::Strict) {
        throw ValidationError(path.string() + ": DUP_KEY duplicate (seq, pos) = (" +
                              std::to_string(r->seq_id) + ", " + std::to_string(r->pos) + ")");
      }
      ++dup_dropped;
      continue;
    }
    ds.records.push_back(std::move(*r));
  }
  ds.metadata = reader.metadata();
  if (report) {
    *report = reader.report();
    if (dup_dropped > 0) {
      report->kept -= dup_dropped;
      report->dropped += dup_dropped;
      report->dropped_by_code["DUP_KEY"] += dup_dropped;
    }
  }
  return ds;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  write_file_atomic(path, [&ds](std::ostream& out) {
    if (!ds.metadata.empty()) {
      ordered_json meta;
      meta["meta"] = json::object();
      for (const auto& [k, v] : ds.metadata) meta["meta"][k] = v;
      out << meta.dump() << '\n';
    }
    for (const auto& r : ds.records) out << format_record_line(r) << '\n';
  });
}

}  // namespace ctp
