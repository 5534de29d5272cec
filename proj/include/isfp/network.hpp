#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "isfp/common.hpp"

namespace isfp {

using NodeId = int;

// Directed link with a BPR volume-delay function t0 * (1 + alpha * (v/c)^beta).
struct Link {
    int id = 0;           // index into Network::links
    NodeId tail = 0;
    NodeId head = 0;
    double free_flow_time = 0.0;
    double capacity_param = 0.0;
    double bpr_alpha = 0.15;
    int bpr_beta = 4;     // integer exponent so the integral stays closed form
};

struct Network {
    std::vector<NodeId> nodes;
    std::vector<Link> links;
    std::vector<NodeId> origins;       // R
    std::vector<NodeId> destinations;  // S
    std::vector<NodeId> candidates;    // K

    // node id -> dense index, and per-node outgoing link indices
    std::map<NodeId, int> node_index;
    std::vector<std::vector<int>> out_links;

    std::size_t num_nodes() const { return nodes.size(); }
    std::size_t num_links() const { return links.size(); }
    int index_of(NodeId n) const;
    bool has_node(NodeId n) const { return node_index.count(n) > 0; }
};

// Per-OD-pair demand d, per-trip service quantity e, and allowed facility set.
struct TripEntry {
    NodeId origin = 0;
    NodeId destination = 0;
    double demand = 0.0;           // d^{rs}
    double service_quantity = 0.0; // e^{rs}
    std::vector<NodeId> allowed_facilities;  // K^{rs}; empty means "all of K"
};

struct TripTable {
    std::vector<TripEntry> entries;

    // Resolved facility list for a given entry (falls back to network.candidates).
    const std::vector<NodeId>& facilities_for(const TripEntry& e, const Network& net) const;
    void validate(const Network& net) const;
};

// Link travel times evaluated at one flow vector.
struct TimeField {
    std::vector<double> link_times;
};

struct ShortestPathTree {
    NodeId source = 0;
    std::vector<double> dist;      // indexed by dense node index
    std::vector<int> pred_link;    // -1 at source / unreachable
    std::vector<bool> reached;     // explicit unreachable flag, no big-M sentinel
};

// t_a(v) = t0 * (1 + alpha * (v/c)^beta)
double link_time(const Link& link, double flow);

// Closed form of \int_0^v t_a(u) du = t0*(v + alpha*v^{beta+1}/((beta+1)*c^beta))
double link_time_integral(const Link& link, double flow);

TimeField free_flow_times(const Network& net);
TimeField evaluate_times(const Network& net, const std::vector<double>& flows);

ShortestPathTree shortest_paths(const Network& net, const TimeField& times, NodeId source);

// tau^{rsk} = dist(r,k) + dist(k,s); one tree per distinct r and per distinct k.
struct LegTimes {
    std::map<std::tuple<NodeId, NodeId, NodeId>, double> tau;  // (r,s,k) -> time
    double at(NodeId r, NodeId s, NodeId k) const;
};

struct TreeSet {
    std::map<NodeId, ShortestPathTree> from_origin;    // keyed by r
    std::map<NodeId, ShortestPathTree> from_facility;  // keyed by k
};

TreeSet build_trees(const Network& net, const TimeField& times, const TripTable& trips,
                    int num_threads = 1);
LegTimes leg_times(const Network& net, const TimeField& times, const TripTable& trips,
                   int num_threads = 1);
LegTimes leg_times_from_trees(const Network& net, const TreeSet& trees, const TripTable& trips);

// TNTP-style network file plus a role sidecar (ORIGINS / DESTINATIONS / CANDIDATES).
Network parse_network(std::istream& net_text, std::istream& roles_text);
Network load_network(const std::string& net_path, const std::string& roles_path);

// Plain-text trip records: "r s d e [k1 k2 ...]" per line.
TripTable parse_trips(std::istream& text);
TripTable load_trips(const std::string& path);

// Fails with ValidationError if some required (r,k) or (k,s) pair is unreachable
// at free-flow times.
void validate_connectivity(const Network& net, const TripTable& trips);

}  // namespace isfp
