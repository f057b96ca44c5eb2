#include "voxseg/labels.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

namespace voxseg {

LabelTable::LabelTable(std::vector<LabelEntry> entries)
    : entries_(std::move(entries)) {
  validate();
  for (const auto& e : entries_) raw_to_id_[e.raw] = e.id;
}

void LabelTable::validate() const {
  std::vector<std::string> problems;
  std::set<int> ids, raws;
  for (const auto& e : entries_) {
    if (!ids.insert(e.id).second)
      problems.push_back("duplicate internal id " + std::to_string(e.id));
    if (!raws.insert(e.raw).second)
      problems.push_back("duplicate raw id " + std::to_string(e.raw));
    if (e.id < 1)
      problems.push_back("internal id " + std::to_string(e.id) +
                         " out of range (background 0 is implicit)");
  }
  for (int want = 1; want <= int(entries_.size()); ++want)
    if (!ids.count(want))
      problems.push_back("internal ids not contiguous, missing " +
                         std::to_string(want));
  if (!problems.empty()) {
    std::string msg = "invalid label table:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw validation_error(msg);
  }
}

LabelTable LabelTable::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw validation_error("cannot open label table: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw validation_error("label table " + path.string() +
                           " is not valid JSON: " + e.what());
  }
  if (!j.contains("labels") || !j["labels"].is_array())
    throw validation_error("label table " + path.string() +
                           " must contain a \"labels\" array");
  std::vector<LabelEntry> entries;
  for (const auto& item : j["labels"]) {
    LabelEntry e;
    try {
      e.raw = item.at("raw").get<int>();
      e.id = item.at("id").get<int>();
      e.name = item.at("name").get<std::string>();
    } catch (const nlohmann::json::exception& ex) {
      throw validation_error("label table entry needs raw/id/name: " +
                             std::string(ex.what()));
    }
    entries.push_back(std::move(e));
  }
  return LabelTable(std::move(entries));
}

void LabelTable::to_json_file(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["labels"] = nlohmann::json::array();
  for (const auto& e : entries_)
    j["labels"].push_back({{"raw", e.raw}, {"id", e.id}, {"name", e.name}});
  std::ofstream out(path);
  if (!out)
    throw validation_error("cannot write label table: " + path.string());
  out << j.dump(2) << "\n";
}

int LabelTable::id_for_raw(int raw) const {
  auto it = raw_to_id_.find(raw);
  return it == raw_to_id_.end() ? 0 : it->second;
}

const std::string& LabelTable::name_for_id(int id) const {
  static const std::string background = "background";
  for (const auto& e : entries_)
    if (e.id == id) return e.name;
  if (id == 0) return background;
  throw validation_error("no label with internal id " + std::to_string(id));
}

Volume remap_labels(const Volume& v, const LabelTable& t) {
  if (!v.is_integer_type())
    throw validation_error("remap_labels expects an integer-typed volume, got " +
                           std::string(voxel_type_name(v.dtype())));
  if (t.eta() > 256)
    throw validation_error("remap_labels output is uint8, label table has " +
                           std::to_string(t.eta()) + " ids");
  Volume out(v.dims(), v.spacing(), VoxelType::u8);
  auto& dst = out.data<uint8_t>();
  std::visit(
      [&](const auto& src) {
        for (uint64_t i = 0; i < src.size(); ++i)
          dst[i] = uint8_t(t.id_for_raw(int(src[i])));
      },
      v.storage());
  return out;
}

}  // namespace voxseg
