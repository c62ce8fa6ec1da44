// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "memotion/errors.hpp"
#include "memotion/kv.hpp"
#include "memotion/sample.hpp"

namespace memotion {

/// Label strings of the annotation file mapped to ordinal codes per task.
/// The first string listed for an ordinal is its canonical name.
class LabelMap {
 public:
  /// Default table, identical to data/label_map.tsv.
  static LabelMap builtin() {
    LabelMap m;
    m.parse(builtin_tsv(), "<builtin label map>");
    return m;
  }

  static LabelMap load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open label map " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    LabelMap m;
    m.parse(ss.str(), path);
    return m;
  }

  /// Tab-separated lines `task  label_string  ordinal`; '#' starts a comment.
  void parse(std::string_view text, const std::string& source) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = kv::trim(line);
      if (t.empty() || t[0] == '#') continue;
      std::vector<std::string> fields;
      std::istringstream ls(t);
      std::string f;
      while (ls >> f) fields.push_back(f);
      if (fields.size() != 3) throw ParseError(source + ":" + std::to_string(lineno) + ": expected 3 fields");
      const Task task = parse_task(fields[0], source, lineno);
      int ordinal = 0;
      try {
        ordinal = kv::parse<int>("ordinal", fields[2]);
      } catch (const ConfigError&) {
        throw ParseError(source + ":" + std::to_string(lineno) + ": bad ordinal '" + fields[2] + "'");
      }
      if (ordinal < 0 || static_cast<std::size_t>(ordinal) >= class_count(task))
        throw ParseError(source + ":" + std::to_string(lineno) + ": ordinal out of range for " + fields[0]);
      auto& table = tables_[task_index(task)];
      table[fields[1]] = ordinal;
      auto& names = canonical_[task_index(task)];
      if (!names.count(ordinal)) names[ordinal] = fields[1];
    }
  }

  std::optional<int> lookup(Task t, std::string_view label) const {
    const auto& table = tables_[task_index(t)];
    auto it = table.find(std::string(label));
    if (it == table.end()) return std::nullopt;
    return it->second;
  }

  std::string name(Task t, int ordinal) const {
    const auto& names = canonical_[task_index(t)];
    auto it = names.find(ordinal);
    if (it == names.end())
      throw InputError("no label name for " + std::string(task_name(t)) + " class " + std::to_string(ordinal));
    return it->second;
  }

  static std::string_view builtin_tsv() {
    return "# task\tlabel\tordinal\n"
           "humor\tnot_funny\t0\n"
           "humor\tfunny\t1\n"
           "humor\tvery_funny\t2\n"
           "humor\thilarious\t3\n"
           "sarcasm\tnot_sarcastic\t0\n"
           "sarcasm\tgeneral\t1\n"
           "sarcasm\ttwisted_meaning\t2\n"
           "sarcasm\tvery_twisted\t3\n"
           "offense\tnot_offensive\t0\n"
           "offense\tslight\t1\n"
           "offense\tvery_offensive\t2\n"
           "offense\thateful_offensive\t3\n"
           "motivation\tnot_motivational\t0\n"
           "motivation\tmotivational\t1\n"
           "sentiment\tnegative\t0\n"
           "sentiment\tvery_negative\t0\n"
           "sentiment\tneutral\t1\n"
           "sentiment\tpositive\t2\n"
           "sentiment\tvery_positive\t2\n";
  }

 private:
  static Task parse_task(const std::string& s, const std::string& source, std::size_t lineno) {
    for (Task t : kAllTasks)
      if (task_name(t) == s) return t;
    throw ParseError(source + ":" + std::to_string(lineno) + ": unknown task '" + s + "'");
  }

  std::array<std::map<std::string, int>, kNumTasks> tables_;
  std::array<std::map<int, std::string>, kNumTasks> canonical_;
};

/// Reads delimited records with RFC 4180 quoting (quoted fields may contain
/// the delimiter, doubled quotes and newlines). Returns each record with the
/// 1-based line number it starts on.
inline std::vector<std::pair<std::size_t, std::vector<std::string>>> read_delimited(std::string_view text, char delim) {
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false, any = false;
  std::size_t line = 1, start_line = 1;
  auto end_record = [&] {
    if (any || !field.empty() || !fields.empty()) {
      fields.push_back(std::move(field));
      rows.emplace_back(start_line, std::move(fields));
    }
    fields.clear();
    field.clear();
    any = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    if (c == '"' && field.empty()) {
      quoted = true;
      any = true;
    } else if (c == delim) {
      fields.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n') {
      end_record();
      ++line;
      start_line = line;
    } else if (c != '\r') {
      field += c;
      any = true;
    }
  }
  if (quoted) throw ParseError("line " + std::to_string(start_line) + ": unterminated quoted field");
  end_record();
  return rows;
}

struct LabeledText {
  std::string image_name;
  std::string text;
  LabelSet labels;
};

/// Parses an annotation table whose header names the columns image_name,
/// text (or text_corrected / text_ocr), humour, sarcasm, offensive,
/// motivational and overall_sentiment. Extra columns are ignored.
inline std::vector<LabeledText> parse_label_text(std::string_view content, const LabelMap& map,
                                                 const std::string& source = "<labels>") {
  const auto first_nl = content.find('\n');
  const std::string_view header_line = content.substr(0, first_nl);
  const char delim = header_line.find('\t') != std::string_view::npos ? '\t' : ',';
  auto rows = read_delimited(content, delim);
  if (rows.empty()) throw FormatError(source + ": missing header");
  const auto& header = rows.front().second;

  auto column = [&](std::initializer_list<std::string_view> names) -> std::optional<std::size_t> {
    for (auto name : names)
      for (std::size_t i = 0; i < header.size(); ++i)
        if (kv::trim(header[i]) == name) return i;
    return std::nullopt;
  };
  auto require = [&](std::initializer_list<std::string_view> names) {
    auto c = column(names);
    if (!c) throw FormatError(source + ": missing column '" + std::string(*names.begin()) + "'");
    return *c;
  };
  const std::size_t image_col = require({"image_name"});
  const std::size_t text_col = require({"text", "text_corrected", "text_ocr"});
  std::array<std::size_t, kNumTasks> task_cols{};
  task_cols[task_index(Task::Humor)] = require({"humour", "humor"});
  task_cols[task_index(Task::Sarcasm)] = require({"sarcasm", "sarcastic"});
  task_cols[task_index(Task::Offense)] = require({"offensive", "offense"});
  task_cols[task_index(Task::Motivation)] = require({"motivational", "motivation"});
  task_cols[task_index(Task::Sentiment)] = require({"overall_sentiment", "sentiment"});

  std::vector<LabeledText> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& [line, fields] = rows[r];
    const std::string where = source + ": row " + std::to_string(line);
    auto get = [&](std::size_t col) -> std::string {
      if (col >= fields.size()) throw FormatError(where + ": too few fields");
      return fields[col];
    };
    LabeledText item;
    item.image_name = kv::trim(get(image_col));
    item.text = get(text_col);
    for (Task t : kAllTasks) {
      const std::string raw = kv::trim(get(task_cols[task_index(t)]));
      auto v = map.lookup(t, raw);
      if (!v) throw ParseError(where + ": unknown " + std::string(task_name(t)) + " label '" + raw + "'");
      item.labels[t] = *v;
    }
    out.push_back(std::move(item));
  }
  return out;
}

inline std::vector<LabeledText> parse_label_file(const std::string& path, const LabelMap& map = LabelMap::builtin()) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open label file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_label_text(ss.str(), map, path);
}

/// Writes the comma-separated form accepted by parse_label_file.
inline std::string format_label_file(const std::vector<LabeledText>& items, const LabelMap& map) {
  auto quote = [](const std::string& s) {
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  };
  std::string out = "image_name,text,humour,sarcasm,offensive,motivational,overall_sentiment\n";
  for (const auto& it : items) {
    out += it.image_name + "," + quote(it.text);
    for (Task t : {Task::Humor, Task::Sarcasm, Task::Offense, Task::Motivation, Task::Sentiment})
      out += "," + map.name(t, it.labels[t]);
    out += "\n";
  }
  return out;
}

}  // namespace memotion
