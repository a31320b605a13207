#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "kbqa/kb.hpp"
#include "support/fixtures.hpp"

using namespace kbqa;

namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& body) {
  auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream out(path);
  out << body;
  return path;
}

}  // namespace

TEST_CASE("symbol table interns densely and bijectively") {
  SymbolTable t;
  const SymbolId a = t.intern("alpha");
  const SymbolId b = t.intern("beta");
  CHECK(a == 0);
  CHECK(b == 1);
  CHECK(t.intern("alpha") == a);
  CHECK(t.size() == 2);
  CHECK(t.label(a) == "alpha");
  CHECK(t.label(b) == "beta");
  CHECK(t.lookup("beta") == b);
  CHECK_FALSE(t.lookup("gamma").has_value());
}

TEST_CASE("idset helpers keep sorted unique order") {
  IdSet s;
  idset_insert(s, 5);
  idset_insert(s, 1);
  idset_insert(s, 5);
  idset_insert(s, 3);
  CHECK(s == IdSet{1, 3, 5});
  CHECK(idset_contains(s, 3));
  CHECK_FALSE(idset_contains(s, 2));
  CHECK(idset_union(IdSet{1, 3}, IdSet{2, 3}) == IdSet{1, 2, 3});
  CHECK(idset_inter(IdSet{1, 3}, IdSet{2, 3}) == IdSet{3});
  CHECK(idset_diff(IdSet{1, 3}, IdSet{2, 3}) == IdSet{1});
}

TEST_CASE("rivers fixture indexes") {
  KnowledgeBase kb = fixtures::rivers_kb();
  const auto flow = fixtures::id(kb, "flow");
  const auto river = fixtures::id(kb, "river");
  const auto country = fixtures::id(kb, "country");

  CHECK(kb.triples().size() == 12);
  CHECK(kb.members_of(country) == fixtures::ids(kb, {"China", "India", "Russia", "USA"}));
  CHECK(kb.members_of(river).size() == 10);

  CHECK(kb.select_targets(fixtures::id(kb, "India"), flow, river) ==
        fixtures::ids(kb, {"Indus", "Satluj", "Godavari"}));
  CHECK(kb.select_targets(fixtures::id(kb, "Russia"), flow, river) ==
        fixtures::ids(kb, {"Volga", "Moskva", "Neva", "Ob"}));

  SECTION("objects outside the requested type are filtered") {
    CHECK(kb.select_targets(fixtures::id(kb, "India"), flow, country).empty());
  }
  SECTION("unknown ids give empty results, not errors") {
    CHECK(kb.select_targets(9999, flow, river).empty());
    CHECK(kb.select_targets(fixtures::id(kb, "India"), 9999, river).empty());
    CHECK(kb.members_of(9999).empty());
  }
}

TEST_CASE("finalize dedups and is idempotent") {
  KnowledgeBase kb;
  const auto a = kb.symbols.intern("a");
  const auto p = kb.symbols.intern("p");
  const auto b = kb.symbols.intern("b");
  const auto t = kb.symbols.intern("t");
  kb.add_triple(a, p, b);
  kb.add_triple(a, p, b);
  kb.declare_type(b, t);
  kb.declare_type(b, t);
  kb.finalize();
  CHECK(kb.triples().size() == 1);
  CHECK(kb.members_of(t) == IdSet{b});
  KnowledgeBase once = kb;
  kb.finalize();
  CHECK(kb == once);
}

TEST_CASE("load_kb parses the committed rivers fixture") {
  KnowledgeBase kb =
      load_kb(fixtures::data_path("rivers_triples.tsv"), fixtures::data_path("rivers_types.tsv"));
  CHECK(kb == fixtures::rivers_kb());
  CHECK(kb.select_targets(fixtures::id(kb, "USA"), fixtures::id(kb, "flow"),
                          fixtures::id(kb, "river")) ==
        fixtures::ids(kb, {"Mississippi", "Colorado", "Rio Grande"}));
}

TEST_CASE("load_kb reloading gives an equal store") {
  auto triples = fixtures::data_path("rivers_triples.tsv");
  auto types = fixtures::data_path("rivers_types.tsv");
  CHECK(load_kb(triples, types) == load_kb(triples, types));
}

TEST_CASE("load_kb rejects malformed rows with line numbers") {
  auto triples = temp_file("kbqa_bad_triples.tsv", "a\tp\tb\nonly_two\tfields\n");
  auto types = temp_file("kbqa_ok_types.tsv", "a\tt\n");
  try {
    load_kb(triples.string(), types.string());
    FAIL("expected KbParseError");
  } catch (const KbParseError& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
}

TEST_CASE("load_kb rejects type rows for entities absent from triples") {
  auto triples = temp_file("kbqa_t2.tsv", "a\tp\tb\n");
  auto types = temp_file("kbqa_bad_types.tsv", "a\tt\nghost\tt\n");
  CHECK_THROWS_AS(load_kb(triples.string(), types.string()), KbParseError);
}

TEST_CASE("load_kb skips comments and blank lines") {
  auto triples = temp_file("kbqa_t3.tsv", "# header\n\na\tp\tb\n");
  auto types = temp_file("kbqa_ty3.tsv", "# header\n\na\tt\n");
  KnowledgeBase kb = load_kb(triples.string(), types.string());
  CHECK(kb.triples().size() == 1);
}
