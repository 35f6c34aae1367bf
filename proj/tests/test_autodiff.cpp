#include <gtest/gtest.h>

#include <cmath>

#include "qmixlab/graph.hpp"
#include "qmixlab/rng.hpp"

using namespace qmixlab;
using ad::Bindings;
using ad::Graph;
using ad::Shape;
using ad::Tensor;

namespace {

// central finite differences, h = 1e-6, over every element of every leaf
void check_grad_fd(const Graph& g, const Bindings& bindings, double tol = 1e-5) {
    std::vector<std::string> names;
    for (const auto& [name, id] : g.leaves()) names.push_back(name);
    auto grads = ad::grad(g, bindings, names);

    const double h = 1e-6;
    for (const auto& name : names) {
        Bindings b = bindings;
        const Tensor& x = bindings.at(name);
        for (long i = 0; i < x.size(); ++i) {
            Tensor xp = x, xm = x;
            xp.data[static_cast<size_t>(i)] += h;
            xm.data[static_cast<size_t>(i)] -= h;
            b[name] = xp;
            double fp = ad::forward(g, b).data[0];
            b[name] = xm;
            double fm = ad::forward(g, b).data[0];
            b[name] = x;
            double fd = (fp - fm) / (2.0 * h);
            double an = grads.at(name).data[static_cast<size_t>(i)];
            double scale = std::max({1.0, std::fabs(fd), std::fabs(an)});
            EXPECT_NEAR(an, fd, tol * scale) << name << "[" << i << "]";
        }
    }
}

Tensor rand_tensor(const Shape& sh, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(sh);
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// random DAG over a pool of nodes; ends in a scalar reduction
std::pair<Graph, Bindings> random_graph(std::uint64_t seed) {
    Rng rng(seed);
    Graph g;
    Bindings b;
    struct Entry {
        int id;
        Shape shape;
    };
    std::vector<Entry> pool;

    int n_leaves = 2 + rng.uniform_int(3);
    for (int i = 0; i < n_leaves; ++i) {
        Shape sh;
        int kind = rng.uniform_int(3);
        if (kind == 0)
            sh = {1 + rng.uniform_int(4)};
        else if (kind == 1)
            sh = {1 + rng.uniform_int(3), 1 + rng.uniform_int(3)};
        else
            sh = {3};
        std::string name = "x" + std::to_string(i);
        pool.push_back({g.leaf(name, sh), sh});
        b[name] = rand_tensor(sh, rng);
    }

    int n_ops = 6 + rng.uniform_int(10);
    for (int k = 0; k < n_ops; ++k) {
        const Entry& a = pool[static_cast<size_t>(rng.uniform_int(static_cast<int>(pool.size())))];
        int choice = rng.uniform_int(10);
        switch (choice) {
        case 0:
            pool.push_back({g.tanh_(a.id), a.shape});
            break;
        case 1:
            pool.push_back({g.sigmoid(a.id), a.shape});
            break;
        case 2:
            pool.push_back({g.elu(a.id), a.shape});
            break;
        case 3:
            // keep exp arguments bounded
            pool.push_back({g.exp_(g.tanh_(a.id)), a.shape});
            break;
        case 4:
            pool.push_back({g.scale(a.id, rng.uniform(-2.0, 2.0)), a.shape});
            break;
        case 5: {
            // elementwise binary with a constant of the same shape
            int c = g.constant(rand_tensor(a.shape, rng));
            int which = rng.uniform_int(3);
            int id = which == 0 ? g.add(a.id, c) : which == 1 ? g.sub(a.id, c) : g.mul(a.id, c);
            pool.push_back({id, a.shape});
            break;
        }
        case 6: {
            // elementwise binary with another pool entry of the same shape
            std::vector<const Entry*> mates;
            for (const auto& e : pool)
                if (e.shape == a.shape) mates.push_back(&e);
            const Entry& m = *mates[static_cast<size_t>(rng.uniform_int(static_cast<int>(mates.size())))];
            int id = rng.uniform_int(2) == 0 ? g.add(a.id, m.id) : g.mul(a.id, m.id);
            pool.push_back({id, a.shape});
            break;
        }
        case 7: {
            if (a.shape.size() == 1) {
                // matrix-vector with a random constant matrix
                int rows = 1 + rng.uniform_int(3);
                int c = g.constant(rand_tensor({rows, a.shape[0]}, rng));
                pool.push_back({g.matmul(c, a.id), {rows}});
            } else {
                int c = g.constant(rand_tensor({a.shape[1]}, rng));
                pool.push_back({g.matmul(a.id, c), {a.shape[0]}});
            }
            break;
        }
        case 8:
            if (a.shape.size() == 1 && a.shape[0] > 1) {
                int end = 1 + rng.uniform_int(a.shape[0]);
                pool.push_back({g.slice(a.id, 0, end), {end}});
            } else {
                pool.push_back({g.reshape(a.id, {static_cast<int>(ad::numel(a.shape))}),
                                {static_cast<int>(ad::numel(a.shape))}});
            }
            break;
        default:
            if (a.shape.size() == 1) {
                const Entry* mate = nullptr;
                for (const auto& e : pool)
                    if (e.shape.size() == 1) mate = &e;
                pool.push_back({g.concat(a.id, mate->id), {a.shape[0] + mate->shape[0]}});
            } else {
                pool.push_back({g.tanh_(a.id), a.shape});
            }
            break;
        }
    }

    // scalar head mixing a few pool entries
    int total = -1;
    for (int i = 0; i < 3; ++i) {
        const Entry& e = pool[static_cast<size_t>(rng.uniform_int(static_cast<int>(pool.size())))];
        int s = g.sum(e.id);
        total = total < 0 ? s : g.add(total, s);
    }
    g.set_output(g.tanh_(total));
    return {std::move(g), std::move(b)};
}

}  // namespace

TEST(Autodiff, HundredRandomGraphsMatchFiniteDifferences) {
    for (std::uint64_t s = 0; s < 100; ++s) {
        auto [g, b] = random_graph(mix_seed(0xF00D, s));
        check_grad_fd(g, b);
    }
}

TEST(Autodiff, GruCellMatchesFiniteDifferences) {
    for (std::uint64_t s = 0; s < 5; ++s) {
        Rng rng(mix_seed(0x6121, s));
        int in = 3, hid = 4;
        Graph g;
        ad::GruLeaves l = ad::gru_leaves(g, "gru", in, hid);
        int x = g.leaf("x", {in});
        int h = g.leaf("h", {hid});
        g.set_output(g.sum(ad::gru_cell(g, l, x, h)));
        Bindings b;
        for (const auto& [name, id] : g.leaves()) b[name] = rand_tensor(g.shape_of(id), rng);
        check_grad_fd(g, b);
    }
}

TEST(Autodiff, GruZeroWeightsHalvesHiddenState) {
    // all parameters zero: z = r = 1/2, candidate = 0, so h' = h/2
    ad::GruParams p;
    p.Wz = p.Wr = p.Wh = Tensor::zeros({4, 3});
    p.Uz = p.Ur = p.Uh = Tensor::zeros({4, 4});
    p.bz = p.br = p.bh = Tensor::zeros({4});
    Tensor x = Tensor::vec({0.3, -0.7, 1.2});
    Tensor h = Tensor::vec({1.0, -2.0, 0.5, 4.0});
    Tensor h2 = ad::gru_step(p, x, h);
    for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(h2.at(i), 0.5 * h.at(i));
}

TEST(Autodiff, SoftmaxXentUniformLogits) {
    Graph g;
    int x = g.leaf("x", {4});
    g.set_output(g.softmax_xent(x, 2));
    Bindings b{{"x", Tensor::vec({0.7, 0.7, 0.7, 0.7})}};
    EXPECT_NEAR(ad::forward(g, b).data[0], std::log(4.0), 1e-12);
}

TEST(Autodiff, AbsSubgradientZeroAtZero) {
    Graph g;
    int x = g.leaf("x", {3});
    g.set_output(g.sum(g.abs_(x)));
    Bindings b{{"x", Tensor::vec({-2.0, 0.0, 3.0})}};
    Tensor gr = ad::grad(g, b, {"x"}).at("x");
    EXPECT_DOUBLE_EQ(gr.at(0), -1.0);
    EXPECT_DOUBLE_EQ(gr.at(1), 0.0);
    EXPECT_DOUBLE_EQ(gr.at(2), 1.0);
}

TEST(Autodiff, MaxReduceGradientGoesToFirstMaximizer) {
    Graph g;
    int x = g.leaf("x", {4});
    g.set_output(g.max_reduce(x));
    Bindings b{{"x", Tensor::vec({1.0, 5.0, 5.0, 2.0})}};
    Tensor gr = ad::grad(g, b, {"x"}).at("x");
    EXPECT_DOUBLE_EQ(gr.at(0), 0.0);
    EXPECT_DOUBLE_EQ(gr.at(1), 1.0);
    EXPECT_DOUBLE_EQ(gr.at(2), 0.0);
    EXPECT_DOUBLE_EQ(gr.at(3), 0.0);
}

TEST(Autodiff, BiasBroadcastAdd) {
    Graph g;
    int m = g.leaf("m", {2, 3});
    int v = g.leaf("v", {3});
    g.set_output(g.sum(g.add(m, v)));
    Bindings b{{"m", Tensor::mat(2, 3, {1, 2, 3, 4, 5, 6})}, {"v", Tensor::vec({10, 20, 30})}};
    EXPECT_DOUBLE_EQ(ad::forward(g, b).data[0], 21.0 + 120.0);
    auto gr = ad::grad(g, b, {"v"});
    for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(gr.at("v").at(i), 2.0);  // one per row
}

TEST(Autodiff, ShapeMismatchRejectedAtBuildTime) {
    Graph g;
    int a = g.leaf("a", {2, 3});
    int b2 = g.leaf("b", {4});
    EXPECT_THROW(g.matmul(a, b2), Error);
    EXPECT_THROW(g.add(b2, a), Error);
    EXPECT_THROW(g.slice(b2, 2, 6), Error);
    EXPECT_THROW(g.reshape(a, {5}), Error);
}

TEST(Autodiff, EvaluationErrors) {
    Graph g;
    int x = g.leaf("x", {2});
    g.set_output(g.sum(x));
    EXPECT_THROW(ad::forward(g, {}), Error);  // unbound leaf
    Bindings wrong{{"x", Tensor::vec({1.0, 2.0, 3.0})}};
    EXPECT_THROW(ad::forward(g, wrong), Error);  // wrong shape
    Bindings inf{{"x", Tensor::vec({1.0, std::numeric_limits<double>::infinity()})}};
    EXPECT_THROW(ad::forward(g, inf), Error);  // non-finite

    Graph g2;
    int y = g2.leaf("y", {3});
    g2.set_output(g2.tanh_(y));  // non-scalar output
    Bindings b{{"y", Tensor::vec({0.1, 0.2, 0.3})}};
    EXPECT_THROW(ad::grad(g2, b, {"y"}), Error);
}

TEST(Autodiff, UnconnectedLeafGetsZeroGradient) {
    Graph g;
    int x = g.leaf("x", {2});
    g.leaf("dangling", {3});
    g.set_output(g.sum(x));
    Bindings b{{"x", Tensor::vec({1.0, 2.0})}, {"dangling", Tensor::vec({1.0, 1.0, 1.0})}};
    Tensor gr = ad::grad(g, b, {"dangling"}).at("dangling");
    for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(gr.at(i), 0.0);
}

TEST(Autodiff, DuplicateLeafNameRejected) {
    Graph g;
    g.leaf("x", {2});
    EXPECT_THROW(g.leaf("x", {2}), Error);
}
