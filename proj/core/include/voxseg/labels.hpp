#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "voxseg/volume.hpp"

namespace voxseg {

struct LabelEntry {
  int raw = 0;       // id used in the source annotation
  int id = 0;        // internal id, 1..eta-1 (0 is background)
  std::string name;
};

// Maps raw annotation ids to the contiguous internal range 0..eta-1.
class LabelTable {
 public:
  LabelTable() = default;
  explicit LabelTable(std::vector<LabelEntry> entries);

  static LabelTable from_json_file(const std::filesystem::path& path);
  void to_json_file(const std::filesystem::path& path) const;

  // Label count including background 0.
  int eta() const { return int(entries_.size()) + 1; }
  const std::vector<LabelEntry>& entries() const { return entries_; }

  // Raw ids absent from the table are background.
  int id_for_raw(int raw) const;
  const std::string& name_for_id(int id) const;

 private:
  void validate() const;

  std::vector<LabelEntry> entries_;
  std::unordered_map<int, int> raw_to_id_;
};

// Replaces raw ids with internal ids; unknown raw ids become background 0.
Volume remap_labels(const Volume& v, const LabelTable& t);

}  // namespace voxseg
