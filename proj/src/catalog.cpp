#include "villa/catalog.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "villa/common.hpp"

namespace villa {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

const char* to_string(Category c) {
  switch (c) {
    case Category::Digit: return "digit";
    case Category::DigitColor: return "digit_color";
    case Category::Shape: return "shape";
    case Category::ShapeSize: return "shape_size";
  }
  return "?";
}

Category category_from_string(std::string_view name) {
  for (int i = 0; i < kCategoryCount; ++i) {
    const auto c = static_cast<Category>(i);
    if (name == to_string(c)) return c;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown category '" + std::string(name) + "'");
}

AttributeCatalog AttributeCatalog::docmnist() {
  static const char* kDigits[] = {"zero", "one", "two",   "three", "four",
                                  "five", "six", "seven", "eight", "nine"};
  static const char* kColors[] = {"purple", "blue", "green", "yellow", "red"};
  static const char* kShapes[] = {"rectangle", "circle"};
  static const char* kSizes[] = {"small", "medium", "large"};

  std::vector<Attribute> attrs;
  for (const char* n : kDigits) attrs.push_back({static_cast<AttrId>(attrs.size()), n, Category::Digit});
  for (const char* n : kColors) attrs.push_back({static_cast<AttrId>(attrs.size()), n, Category::DigitColor});
  for (const char* n : kShapes) attrs.push_back({static_cast<AttrId>(attrs.size()), n, Category::Shape});
  for (const char* n : kSizes) attrs.push_back({static_cast<AttrId>(attrs.size()), n, Category::ShapeSize});

  std::map<Category, std::vector<std::string>> templates{
      {Category::Digit,
       {"The image shows a [slot]", "The digit appears to be [slot]",
        "There is an image showing a [slot]", "The number is a [slot]"}},
      {Category::DigitColor,
       {"The color is [slot]", "The digit appears to be [slot]", "There is a [slot] image",
        "The image is [slot]"}},
      {Category::Shape,
       {"The shape is a [slot]", "The shape appears to be a [slot]", "There is a [slot]",
        "The image has a [slot]"}},
      {Category::ShapeSize,
       {"The shape size is [slot]", "The size of the shape is [slot]", "The shape is [slot]"}},
  };
  return AttributeCatalog(std::move(attrs), std::move(templates));
}

AttributeCatalog::AttributeCatalog(std::vector<Attribute> attributes,
                                   std::map<Category, std::vector<std::string>> templates)
    : attributes_(std::move(attributes)), templates_(std::move(templates)) {
  for (std::size_t i = 0; i < attributes_.size(); ++i) {
    if (attributes_[i].id != static_cast<AttrId>(i)) {
      throw Error(ErrorKind::InvalidArgument, "attribute ids must be dense and ordered");
    }
  }
  for (const auto& [cat, list] : templates_) {
    for (const auto& t : list) {
      const auto first = t.find(kSlot);
      if (first == std::string::npos || t.find(kSlot, first + 1) != std::string::npos) {
        throw Error(ErrorKind::InvalidArgument, "template must contain exactly one slot: " + t);
      }
    }
  }
}

const Attribute& AttributeCatalog::at(AttrId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= attributes_.size()) {
    throw Error(ErrorKind::UnknownAttribute, "attribute id " + std::to_string(id));
  }
  return attributes_[static_cast<std::size_t>(id)];
}

const std::vector<std::string>& AttributeCatalog::templates(Category c) const {
  auto it = templates_.find(c);
  if (it == templates_.end() || it->second.empty()) {
    throw Error(ErrorKind::InvalidArgument, std::string("no templates for ") + to_string(c));
  }
  return it->second;
}

std::optional<AttrId> AttributeCatalog::find(std::string_view name) const {
  for (const auto& a : attributes_) {
    if (a.name == name) return a.id;
  }
  return std::nullopt;
}

AttrId AttributeCatalog::digit(int value) const { return of_category(Category::Digit).at(static_cast<std::size_t>(value)); }
AttrId AttributeCatalog::color(int index) const { return of_category(Category::DigitColor).at(static_cast<std::size_t>(index)); }
AttrId AttributeCatalog::shape(int index) const { return of_category(Category::Shape).at(static_cast<std::size_t>(index)); }
AttrId AttributeCatalog::size_attr(int index) const { return of_category(Category::ShapeSize).at(static_cast<std::size_t>(index)); }

std::vector<AttrId> AttributeCatalog::of_category(Category c) const {
  std::vector<AttrId> out;
  for (const auto& a : attributes_) {
    if (a.category == c) out.push_back(a.id);
  }
  return out;
}

std::string AttributeCatalog::instantiate(std::string_view tmpl, std::string_view name) {
  std::string out(tmpl);
  const auto pos = out.find(kSlot);
  out.replace(pos, kSlot.size(), name);
  return out;
}

std::optional<AttrId> AttributeCatalog::attribute_of_sentence(std::string_view sentence) const {
  const auto toks = tokenize(sentence);
  // Template text never contains an attribute name, so the slot token is the
  // only match.
  for (const auto& tok : toks) {
    if (auto id = find(tok)) return id;
  }
  return std::nullopt;
}

std::vector<AttrId> AttributeCatalog::attributes_in(const std::vector<std::string>& sentences) const {
  std::set<AttrId> ids;
  for (const auto& s : sentences) {
    for (const auto& tok : tokenize(s)) {
      if (auto id = find(tok)) ids.insert(*id);
    }
  }
  return {ids.begin(), ids.end()};
}

bool AttributeCatalog::mentions(std::string_view sentence, AttrId attr) const {
  const auto& name = at(attr).name;
  const auto toks = tokenize(sentence);
  return std::find(toks.begin(), toks.end(), name) != toks.end();
}

nlohmann::json AttributeCatalog::to_json() const {
  nlohmann::json j;
  j["attributes"] = nlohmann::json::array();
  for (const auto& a : attributes_) {
    j["attributes"].push_back({{"id", a.id}, {"name", a.name}, {"category", to_string(a.category)}});
  }
  j["templates"] = nlohmann::json::object();
  for (const auto& [cat, list] : templates_) j["templates"][to_string(cat)] = list;
  return j;
}

AttributeCatalog AttributeCatalog::from_json(const nlohmann::json& j) {
  std::vector<Attribute> attrs;
  for (const auto& a : j.at("attributes")) {
    attrs.push_back({a.at("id").get<AttrId>(), a.at("name").get<std::string>(),
                     category_from_string(a.at("category").get<std::string>())});
  }
  std::map<Category, std::vector<std::string>> templates;
  for (const auto& [name, list] : j.at("templates").items()) {
    templates[category_from_string(name)] = list.get<std::vector<std::string>>();
  }
  return AttributeCatalog(std::move(attrs), std::move(templates));
}

}  // namespace villa
