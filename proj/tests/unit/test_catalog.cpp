#include <doctest.h>

#include "villa/catalog.hpp"
#include "villa/common.hpp"

using namespace villa;

TEST_CASE("docmnist vocabulary layout") {
  const auto cat = AttributeCatalog::docmnist();
  REQUIRE(cat.size() == 20);
  CHECK(cat.at(0).name == "zero");
  CHECK(cat.at(9).name == "nine");
  CHECK(cat.at(10).name == "purple");
  CHECK(cat.at(14).name == "red");
  CHECK(cat.at(15).name == "rectangle");
  CHECK(cat.at(16).name == "circle");
  CHECK(cat.at(17).name == "small");
  CHECK(cat.at(19).name == "large");
  CHECK(cat.of_category(Category::Digit).size() == 10);
  CHECK(cat.of_category(Category::DigitColor).size() == 5);
  CHECK(cat.of_category(Category::Shape).size() == 2);
  CHECK(cat.of_category(Category::ShapeSize).size() == 3);
  CHECK(cat.templates(Category::Digit).size() == 4);
  CHECK(cat.templates(Category::DigitColor).size() == 4);
  CHECK(cat.templates(Category::Shape).size() == 4);
  CHECK(cat.templates(Category::ShapeSize).size() == 3);
  CHECK(cat.digit(7) == 7);
  CHECK(cat.color(2) == 12);
  CHECK(cat.shape(1) == 16);
  CHECK(cat.size_attr(0) == 17);
  CHECK(cat.find("green") == 12);
  CHECK_FALSE(cat.find("magenta").has_value());
  CHECK_THROWS_AS(cat.at(20), Error);
}

TEST_CASE("tokenize lowercases and splits on non-alphanumerics") {
  CHECK(tokenize("The Digit, appears-to be SEVEN.") ==
        std::vector<std::string>{"the", "digit", "appears", "to", "be", "seven"});
  CHECK(tokenize("  ...  ").empty());
}

TEST_CASE("every template sentence parses back to its attribute") {
  const auto cat = AttributeCatalog::docmnist();
  for (const auto& a : cat.attributes()) {
    for (const auto& t : cat.templates(a.category)) {
      const auto s = AttributeCatalog::instantiate(t, a.name);
      CHECK(s.find("[slot]") == std::string::npos);
      CHECK(cat.attribute_of_sentence(s) == a.id);
      CHECK(cat.mentions(s, a.id));
    }
  }
  CHECK(AttributeCatalog::instantiate("The color is [slot]", "red") == "The color is red");
}

TEST_CASE("attributes_in is sorted and distinct") {
  const auto cat = AttributeCatalog::docmnist();
  const std::vector<std::string> s{"The color is red", "The number is a two", "The image is red",
                                   "There is a circle"};
  CHECK(cat.attributes_in(s) == std::vector<AttrId>{2, 14, 16});
  CHECK_FALSE(cat.mentions("The color is red", 10));
}

TEST_CASE("catalog json round trip") {
  const auto cat = AttributeCatalog::docmnist();
  const auto back = AttributeCatalog::from_json(cat.to_json());
  CHECK(back.to_json() == cat.to_json());
  CHECK(category_from_string("shape_size") == Category::ShapeSize);
  CHECK_THROWS_AS(category_from_string("texture"), Error);
}

TEST_CASE("templates need exactly one slot") {
  std::vector<Attribute> attrs{{0, "zero", Category::Digit}};
  CHECK_THROWS_AS(AttributeCatalog(attrs, {{Category::Digit, {"no slot here"}}}), Error);
  CHECK_THROWS_AS(AttributeCatalog(attrs, {{Category::Digit, {"[slot] and [slot]"}}}), Error);
}
