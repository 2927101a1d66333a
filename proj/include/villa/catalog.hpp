#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace villa {

enum class Category { Digit = 0, DigitColor = 1, Shape = 2, ShapeSize = 3 };
inline constexpr int kCategoryCount = 4;

const char* to_string(Category c);
Category category_from_string(std::string_view name);

using AttrId = int;

/// Lowercased alphanumeric tokens.
std::vector<std::string> tokenize(std::string_view text);

struct Attribute {
  AttrId id;
  std::string name;
  Category category;
};

struct Rgb {
  unsigned char r, g, b;
};

/// The attribute vocabulary and the sentence templates used to mention it.
/// Templates carry a single "[slot]" placeholder.
class AttributeCatalog {
 public:
  static constexpr std::string_view kSlot = "[slot]";

  /// The 20-attribute DocMNIST vocabulary: digits zero..nine (ids 0-9),
  /// colors purple, blue, green, yellow, red (10-14), shapes rectangle,
  /// circle (15-16) and sizes small, medium, large (17-19).
  static AttributeCatalog docmnist();

  AttributeCatalog(std::vector<Attribute> attributes,
                   std::map<Category, std::vector<std::string>> templates);

  std::size_t size() const { return attributes_.size(); }
  const std::vector<Attribute>& attributes() const { return attributes_; }
  const Attribute& at(AttrId id) const;
  const std::vector<std::string>& templates(Category c) const;
  std::optional<AttrId> find(std::string_view name) const;

  AttrId digit(int value) const;
  AttrId color(int index) const;
  AttrId shape(int index) const;
  AttrId size_attr(int index) const;
  std::vector<AttrId> of_category(Category c) const;

  static std::string instantiate(std::string_view tmpl, std::string_view name);

  /// Attribute named by a rendered sentence (its trailing token), if any.
  std::optional<AttrId> attribute_of_sentence(std::string_view sentence) const;
  /// Distinct attributes mentioned across the sentences, ascending by id.
  std::vector<AttrId> attributes_in(const std::vector<std::string>& sentences) const;
  /// True if `sentence` mentions `attr` as a whole token.
  bool mentions(std::string_view sentence, AttrId attr) const;

  nlohmann::json to_json() const;
  static AttributeCatalog from_json(const nlohmann::json& j);

 private:
  std::vector<Attribute> attributes_;
  std::map<Category, std::vector<std::string>> templates_;
};

/// Canonical digit colors, indexed like AttributeCatalog::color().
inline constexpr std::array<Rgb, 5> kColorValues = {{
    {128, 0, 255},  // purple
    {0, 0, 255},    // blue
    {0, 200, 0},    // green
    {255, 220, 0},  // yellow
    {255, 0, 0},    // red
}};

}  // namespace villa
