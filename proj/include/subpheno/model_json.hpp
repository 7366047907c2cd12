#pragma once

// JSON (de)serialization for the fitted models. Layout:
//   logistic: {"type":"logistic","weights":[...],"bias":b,"l2":v}
//   forest:   {"type":"forest","n_classes":k,"dim":d,"trees":[[node...],...]}
//   gbdt:     {"type":"gbdt","n_classes":k,"dim":d,"learning_rate":lr,
//              "base_score":[...],"rounds":[[tree,...],...]}
// Tree nodes serialize as arrays
//   [feature, threshold, left, right, value, gain, n_samples, class_prob...]
// with feature = -1 marking a leaf. Doubles round-trip exactly.

#include <json.hpp>

#include "subpheno/learn.hpp"

namespace subpheno {

inline nlohmann::json tree_to_json(const Tree& tree) {
    nlohmann::json arr = nlohmann::json::array();
    for (const TreeNode& nd : tree) {
        nlohmann::json n = {nd.feature, nd.threshold, nd.left,
                            nd.right,   nd.value,     nd.gain,
                            nd.n_samples};
        for (double p : nd.class_prob) n.push_back(p);
        arr.push_back(std::move(n));
    }
    return arr;
}

inline Tree tree_from_json(const nlohmann::json& arr) {
    Tree tree;
    for (const auto& n : arr) {
        TreeNode nd;
        nd.feature = n.at(0).get<int>();
        nd.threshold = n.at(1).get<double>();
        nd.left = n.at(2).get<int>();
        nd.right = n.at(3).get<int>();
        nd.value = n.at(4).get<double>();
        nd.gain = n.at(5).get<double>();
        nd.n_samples = n.at(6).get<std::size_t>();
        for (std::size_t i = 7; i < n.size(); ++i)
            nd.class_prob.push_back(n.at(i).get<double>());
        tree.push_back(std::move(nd));
    }
    return tree;
}

inline nlohmann::json to_json(const LogisticModel& m) {
    return {{"type", "logistic"},
            {"weights", m.weights},
            {"bias", m.bias},
            {"l2", m.l2},
            {"n_iter", m.n_iter}};
}

inline LogisticModel logistic_from_json(const nlohmann::json& j) {
    if (j.at("type") != "logistic") throw std::invalid_argument("not a logistic model");
    LogisticModel m;
    m.weights = j.at("weights").get<std::vector<double>>();
    m.bias = j.at("bias").get<double>();
    m.l2 = j.at("l2").get<double>();
    m.n_iter = j.value("n_iter", 0);
    return m;
}

inline nlohmann::json to_json(const ForestModel& m) {
    nlohmann::json trees = nlohmann::json::array();
    for (const Tree& t : m.trees) trees.push_back(tree_to_json(t));
    return {{"type", "forest"},
            {"n_classes", m.n_classes},
            {"dim", m.dim},
            {"seed", m.seed},
            {"trees", std::move(trees)}};
}

inline ForestModel forest_from_json(const nlohmann::json& j) {
    if (j.at("type") != "forest") throw std::invalid_argument("not a forest model");
    ForestModel m;
    m.n_classes = j.at("n_classes").get<int>();
    m.dim = j.at("dim").get<std::size_t>();
    m.seed = j.value("seed", 0ULL);
    for (const auto& t : j.at("trees")) m.trees.push_back(tree_from_json(t));
    return m;
}

inline nlohmann::json to_json(const GbdtModel& m) {
    nlohmann::json rounds = nlohmann::json::array();
    for (const auto& round : m.rounds) {
        nlohmann::json r = nlohmann::json::array();
        for (const Tree& t : round) r.push_back(tree_to_json(t));
        rounds.push_back(std::move(r));
    }
    return {{"type", "gbdt"},
            {"n_classes", m.n_classes},
            {"dim", m.dim},
            {"learning_rate", m.options.learning_rate},
            {"l2_leaf", m.options.l2_leaf},
            {"base_score", m.base_score},
            {"rounds", std::move(rounds)}};
}

inline GbdtModel gbdt_from_json(const nlohmann::json& j) {
    if (j.at("type") != "gbdt") throw std::invalid_argument("not a gbdt model");
    GbdtModel m;
    m.n_classes = j.at("n_classes").get<int>();
    m.dim = j.at("dim").get<std::size_t>();
    m.options.learning_rate = j.at("learning_rate").get<double>();
    m.options.l2_leaf = j.at("l2_leaf").get<double>();
    m.base_score = j.at("base_score").get<std::vector<double>>();
    for (const auto& round : j.at("rounds")) {
        std::vector<Tree> trees;
        for (const auto& t : round) trees.push_back(tree_from_json(t));
        m.rounds.push_back(std::move(trees));
    }
    return m;
}

}  // namespace subpheno
