#include <doctest.h>

#include <filesystem>
#include <set>

#include "fixtures.hpp"
#include "sra/errors.hpp"
#include "sra/network.hpp"
#include "sra/structure_graph.hpp"

using namespace sra;
using sra::testing::random_arch;

namespace {

// Literal check of the subnet conditions against the graph.
void check_conditions(const Arch& arch, const SubnetSpec& spec) {
  const StructureGraph g = build_graph(arch);
  const std::size_t last = g.nodes.size() - 1;
  REQUIRE(spec.selected.size() == g.nodes.size());
  CHECK(static_cast<Index>(spec.selected[0].size()) == g.nodes[0]);
  CHECK(spec.selected[last].empty());
  CHECK(spec.selected[last - 1].size() == 1);
  for (std::size_t k = 1; k < last; ++k) {
    CHECK(spec.selected[k].size() >= 1);
    CHECK(static_cast<Index>(spec.selected[k].size()) <= spec.width);
    CHECK(static_cast<Index>(spec.selected[k].size()) < g.nodes[k]);
    CHECK(std::set<Index>(spec.selected[k].begin(), spec.selected[k].end()).size() == spec.selected[k].size());
    CHECK(spec.selected[k] == spec.selected[static_cast<std::size_t>(g.tie[k])]);
  }
}

}  // namespace

TEST_CASE("mlp graph nodes and edges") {
  StructureGraph g = build_graph(archs::mlp({2, 3, 2}));
  CHECK(g.nodes == std::vector<Index>{2, 3, 2});
  CHECK(g.edge_count() == 12);
}

TEST_CASE("conv graph uses channels as nodes") {
  Arch a;
  a.channels = 3;
  a.height = a.width = 8;
  a.classes = 4;
  a.layers = {LayerSpec::conv2d(3, 16, 3, 1, 1), LayerSpec::relu(), LayerSpec::conv2d(16, 32, 3, 1, 1),
              LayerSpec::avgpool(8, 8), LayerSpec::flatten(), LayerSpec::dense(32, 4)};
  StructureGraph g = build_graph(a);
  CHECK(g.nodes == std::vector<Index>{3, 16, 32, 4});
  CHECK(g.producer == std::vector<Index>{-1, 0, 2, 5});
}

TEST_CASE("edge count equals explicit enumeration") {
  Rng rng(1);
  for (int t = 0; t < 10; ++t) {
    Arch a = random_arch(rng);
    StructureGraph g = build_graph(a);
    Index edges = 0;
    for (std::size_t k = 0; k + 1 < g.nodes.size(); ++k)
      for (Index u = 0; u < g.nodes[k]; ++u)
        for (Index v = 0; v < g.nodes[k + 1]; ++v) ++edges;
    CHECK(g.edge_count() == edges);
    CHECK(g.nodes.back() == a.classes);
  }
}

TEST_CASE("residual and depthwise layers are tied") {
  StructureGraph g = build_graph(archs::toy_resnet());
  // node layers: input, conv0, conv4, conv7, conv12, dense17
  CHECK(g.nodes == std::vector<Index>{1, 8, 8, 8, 16, 10});
  CHECK(g.tie[3] == 1);
  CHECK(g.tie[2] == 2);
  Rng rng(2);
  Arch grouped = random_arch(rng, 4);
  StructureGraph gg = build_graph(grouped);
  CHECK(gg.tie[3] == 2);
}

TEST_CASE("flatten maps a channel to its spatial block") {
  Rng rng(3);
  Arch a = random_arch(rng, 2);
  auto spaces = layer_spaces(a);
  CHECK(spaces[2].node_layer == 1);
  CHECK(spaces[2].factor == 9);
  CHECK(spaces[3].factor == 1);
}

TEST_CASE("top strategy picks lowest indices") {
  Arch a = archs::toy_vgg();
  SubnetSpec s = select_subnet(a, 2, 3, 0, SelectStrategy::top);
  CHECK(s.selected[1] == std::vector<Index>{0, 1});
  CHECK(s.selected[2] == std::vector<Index>{0, 1});
  CHECK(s.selected[3] == std::vector<Index>{0});
  check_conditions(a, s);
}

TEST_CASE("random selection is reproducible and valid") {
  Rng rng(4);
  for (int t = 0; t < 25; ++t) {
    Arch a = random_arch(rng);
    for (Index w : {1, 2}) {
      SubnetSpec s1 = select_subnet(a, w, 1, 100 + t);
      SubnetSpec s2 = select_subnet(a, w, 1, 100 + t);
      CHECK(s1 == s2);
      check_conditions(a, s1);
      if (w == 1)
        for (std::size_t k = 1; k + 1 < s1.selected.size(); ++k) CHECK(s1.selected[k].size() == 1);
      // Narrow arch is shape-valid and runs.
      Arch narrow = derive_subnet_arch(a, s1);
      Model m = make_model(narrow, 1);
      Rng xr(5);
      Tensor<float> y = forward(narrow, m.params, sra::testing::random_images(narrow, 2, xr), Mode::eval);
      CHECK(y.shape() == Shape{2, 1});
    }
  }
  Arch vgg = archs::toy_vgg();
  CHECK(select_subnet(vgg, 1, 0, 1) != select_subnet(vgg, 1, 0, 2));
}

TEST_CASE("selection errors") {
  Arch a = archs::mlp({4, 3, 3, 2});
  CHECK_THROWS_AS(select_subnet(a, 3, 0, 1), SpecError);   // width 3 leaves nothing
  CHECK_THROWS_AS(select_subnet(a, 1, 2, 1), SpecError);   // target out of range
  CHECK_THROWS_AS(select_subnet(a, 1, -1, 1), SpecError);
  CHECK_THROWS_AS(select_subnet(a, 0, 0, 1), SpecError);
  // Spatial extent left at the classifier.
  Arch wide;
  wide.channels = 1;
  wide.height = wide.width = 4;
  wide.classes = 2;
  wide.layers = {LayerSpec::conv2d(1, 4, 3, 1, 1), LayerSpec::relu(), LayerSpec::flatten(),
                 LayerSpec::dense(64, 2)};
  CHECK_THROWS_AS(select_subnet(wide, 1, 0, 1), SpecError);
}

TEST_CASE("grouping that crosses groups is rejected") {
  Rng rng(6);
  Arch a = random_arch(rng, 4);
  SubnetSpec s = select_subnet(a, 2, 0, 9);
  const Index per = a.layers[0].out / 2;
  // Force node layer 1 across both groups.
  s.selected[1] = {0, per};
  CHECK_THROWS_WITH_AS(derive_subnet_arch(a, s), doctest::Contains("incompatible grouping"), SpecError);
}

TEST_CASE("derived VGG subnets") {
  Arch a = archs::toy_vgg();
  Arch n1 = derive_subnet_arch(a, select_subnet(a, 1, 0, 7));
  for (const auto& l : n1.layers) {
    if (l.kind == LayerKind::conv2d) CHECK(l.out == 1);
    if (l.kind == LayerKind::batchnorm) CHECK(l.in == 1);
  }
  CHECK(n1.layers.back().out == 1);
  CHECK(n1.classes == 1);
  // Closed-form: 3 convs 1->1 (k3) + 3 bn + dense 1->1.
  const Index expect = 3 * (9 + 1) + 3 * 4 + 2;
  CHECK(param_count(n1) == expect);
  CHECK(static_cast<double>(expect) < 0.001 * static_cast<double>(param_count(a)));

  Arch n2 = derive_subnet_arch(a, select_subnet(a, 2, 0, 7));
  CHECK(n2.layers[0].out == 2);
  CHECK(n2.layers[4].in == 2);
  CHECK(n2.layers[4].out == 2);
  CHECK(n2.layers[8].out == 1);
}

TEST_CASE("count_modified closed form on a small MLP") {
  Arch a = archs::mlp({2, 2, 2, 2});
  SubnetSpec s = select_subnet(a, 1, 1, 3, SelectStrategy::top);
  // layer1 (2->2): selected row replaced (2) + bias (1); input shared.
  // layer2 (2->2): 1 replaced, 1 unsel->sel, 1 sel->unsel, bias 1.
  // classifier (2->2): column of 2 + target bias.
  CHECK(count_modified(a, s).modified == 3 + 4 + 3);
  CHECK(count_modified(a, s, 5).accepted == false);
  CHECK(count_modified(a, s).accepted);
}

TEST_CASE("count_modified grows linearly in W") {
  // Each hidden layer between two width-W selections costs
  // W*(n_in + n_out)*k*k - W*W*k*k, so growth is linear up to the small
  // quadratic overlap term.
  Arch a = archs::toy_vgg();
  Index c[4];
  for (Index w = 1; w <= 3; ++w) c[w] = count_modified(a, select_subnet(a, w, 0, 11)).modified;
  const Index d1 = c[2] - c[1], d2 = c[3] - c[2];
  CHECK(d1 > 0);
  CHECK(d2 > 0);
  CHECK(std::abs(d1 - d2) < d1 / 20);
  // Only conv2 sits between two width-W layers: second difference is -2*9.
  CHECK(d2 - d1 == -18);
}

TEST_CASE("spec text roundtrip") {
  Arch a = archs::toy_resnet();
  SubnetSpec s = select_subnet(a, 2, 4, 1234567890123ULL);
  CHECK(spec_from_text(spec_to_text(s)) == s);
  auto path = std::filesystem::temp_directory_path() / "sra_spec_roundtrip.txt";
  save_spec(s, path);
  CHECK(load_spec(path) == s);
  CHECK_THROWS_AS(spec_from_text("sra-subnet-spec 1\nwidth x\nend\n"), FormatError);
  CHECK_THROWS_AS(spec_from_text("nope\n"), FormatError);
  SubnetSpec other = s;
  other.arch_hash ^= 1;
  CHECK_THROWS_AS(validate_spec(a, other), SpecError);
}

TEST_CASE("disjointness") {
  Arch a = archs::toy_vgg();
  SubnetSpec s1 = select_subnet(a, 1, 0, 1, SelectStrategy::top);
  SubnetSpec s2 = s1;
  for (std::size_t k = 1; k + 1 < s2.selected.size(); ++k) s2.selected[k] = {5};
  CHECK(specs_disjoint(s1, s2));
  s2.selected[2] = {0};
  CHECK_FALSE(specs_disjoint(s1, s2));
}
