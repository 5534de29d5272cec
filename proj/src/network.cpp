#include "isfp/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>
#include <thread>

namespace isfp {

int Network::index_of(NodeId n) const {
    auto it = node_index.find(n);
    if (it == node_index.end())
        throw ValidationError("unknown node id " + std::to_string(n));
    return it->second;
}

double link_time(const Link& link, double flow) {
    if (flow < 0.0) throw DomainError("link_time: negative flow");
    if (link.bpr_alpha == 0.0) return link.free_flow_time;
    const double ratio = flow / link.capacity_param;
    double p = 1.0;
    for (int i = 0; i < link.bpr_beta; ++i) p *= ratio;
    return link.free_flow_time * (1.0 + link.bpr_alpha * p);
}

double link_time_integral(const Link& link, double flow) {
    if (flow < 0.0) throw DomainError("link_time_integral: negative flow");
    if (link.bpr_alpha == 0.0) return link.free_flow_time * flow;
    const double ratio = flow / link.capacity_param;
    double p = flow;  // v * (v/c)^beta
    for (int i = 0; i < link.bpr_beta; ++i) p *= ratio;
    return link.free_flow_time * (flow + link.bpr_alpha * p / (link.bpr_beta + 1));
}

TimeField free_flow_times(const Network& net) {
    TimeField tf;
    tf.link_times.reserve(net.links.size());
    for (const auto& l : net.links) tf.link_times.push_back(l.free_flow_time);
    return tf;
}

TimeField evaluate_times(const Network& net, const std::vector<double>& flows) {
    if (flows.size() != net.links.size())
        throw DomainError("evaluate_times: flow vector size mismatch");
    TimeField tf;
    tf.link_times.resize(net.links.size());
    for (std::size_t a = 0; a < net.links.size(); ++a)
        tf.link_times[a] = link_time(net.links[a], flows[a]);
    return tf;
}

ShortestPathTree shortest_paths(const Network& net, const TimeField& times, NodeId source) {
    if (times.link_times.size() != net.links.size())
        throw DomainError("shortest_paths: time field size mismatch");
    for (double t : times.link_times)
        if (!(t > 0.0)) throw DomainError("shortest_paths: nonpositive link time");

    const std::size_t n = net.num_nodes();
    ShortestPathTree tree;
    tree.source = source;
    tree.dist.assign(n, std::numeric_limits<double>::infinity());
    tree.pred_link.assign(n, -1);
    tree.reached.assign(n, false);

    const int src = net.index_of(source);
    tree.dist[src] = 0.0;

    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    pq.push({0.0, src});
    while (!pq.empty()) {
        auto [d, u] = pq.top();
        pq.pop();
        if (d > tree.dist[u]) continue;
        if (tree.reached[u] && d == tree.dist[u] && u != src) {
            // already settled with equal label
        }
        tree.reached[u] = true;
        for (int a : net.out_links[u]) {
            const Link& l = net.links[a];
            const int v = net.node_index.at(l.head);
            const double nd = d + times.link_times[a];
            if (nd < tree.dist[v]) {
                tree.dist[v] = nd;
                tree.pred_link[v] = a;
                pq.push({nd, v});
            } else if (nd == tree.dist[v] && tree.pred_link[v] >= 0 && a < tree.pred_link[v]) {
                tree.pred_link[v] = a;  // deterministic tie-break: lowest link id
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(tree.dist[i])) tree.reached[i] = false;
    return tree;
}

const std::vector<NodeId>& TripTable::facilities_for(const TripEntry& e, const Network& net) const {
    return e.allowed_facilities.empty() ? net.candidates : e.allowed_facilities;
}

void TripTable::validate(const Network& net) const {
    for (const auto& e : entries) {
        if (e.demand < 0.0) throw ValidationError("trip table: negative demand");
        if (e.service_quantity < 0.0) throw ValidationError("trip table: negative service quantity");
        net.index_of(e.origin);
        net.index_of(e.destination);
        for (NodeId k : e.allowed_facilities) {
            if (std::find(net.candidates.begin(), net.candidates.end(), k) == net.candidates.end())
                throw ValidationError("trip table: facility " + std::to_string(k) +
                                      " is not a candidate location");
        }
        if (e.demand > 0.0 && facilities_for(e, net).empty())
            throw ValidationError("trip table: no allowed facility for pair with positive demand");
    }
}

TreeSet build_trees(const Network& net, const TimeField& times, const TripTable& trips,
                    int num_threads) {
    std::set<NodeId> origins, facilities;
    for (const auto& e : trips.entries) {
        origins.insert(e.origin);
        for (NodeId k : trips.facilities_for(e, net)) facilities.insert(k);
    }
    std::vector<std::pair<NodeId, bool>> work;  // (node, is_origin)
    for (NodeId r : origins) work.emplace_back(r, true);
    for (NodeId k : facilities) work.emplace_back(k, false);

    std::vector<ShortestPathTree> results(work.size());
    auto run = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i)
            results[i] = shortest_paths(net, times, work[i].first);
    };
    if (num_threads <= 1 || work.size() < 2) {
        run(0, work.size());
    } else {
        const std::size_t nt = std::min<std::size_t>(num_threads, work.size());
        std::vector<std::thread> pool;
        const std::size_t chunk = (work.size() + nt - 1) / nt;
        for (std::size_t t = 0; t < nt; ++t) {
            const std::size_t b = t * chunk;
            const std::size_t e = std::min(work.size(), b + chunk);
            if (b < e) pool.emplace_back(run, b, e);
        }
        for (auto& th : pool) th.join();
    }

    TreeSet trees;
    for (std::size_t i = 0; i < work.size(); ++i) {
        if (work[i].second)
            trees.from_origin[work[i].first] = std::move(results[i]);
        else
            trees.from_facility[work[i].first] = std::move(results[i]);
    }
    return trees;
}

double LegTimes::at(NodeId r, NodeId s, NodeId k) const {
    auto it = tau.find({r, s, k});
    if (it == tau.end())
        throw DomainError("leg_times: missing triple");
    return it->second;
}

LegTimes leg_times_from_trees(const Network& net, const TreeSet& trees, const TripTable& trips) {
    LegTimes lt;
    for (const auto& e : trips.entries) {
        const auto& rt = trees.from_origin.at(e.origin);
        for (NodeId k : trips.facilities_for(e, net)) {
            const auto& kt = trees.from_facility.at(k);
            const int ik = net.index_of(k);
            const int is = net.index_of(e.destination);
            if (!rt.reached[ik] || !kt.reached[is])
                throw ValidationError("leg_times: triple (" + std::to_string(e.origin) + "," +
                                      std::to_string(e.destination) + "," + std::to_string(k) +
                                      ") is unreachable");
            lt.tau[{e.origin, e.destination, k}] = rt.dist[ik] + kt.dist[is];
        }
    }
    return lt;
}

LegTimes leg_times(const Network& net, const TimeField& times, const TripTable& trips,
                   int num_threads) {
    return leg_times_from_trees(net, build_trees(net, times, trips, num_threads), trips);
}

void validate_connectivity(const Network& net, const TripTable& trips) {
    leg_times(net, free_flow_times(net), trips);
}

namespace {

bool is_blank(const std::string& s) {
    return s.find_first_not_of(" \t\r\n") == std::string::npos;
}

std::string strip_comment(const std::string& line) {
    // '~' starts a comment in TNTP files; ';' terminates a record
    std::string out = line;
    auto pos = out.find('~');
    if (pos != std::string::npos) out.erase(pos);
    for (char& c : out)
        if (c == ';' || c == '\r' || c == '\t') c = ' ';
    return out;
}

}  // namespace

Network parse_network(std::istream& net_text, std::istream& roles_text) {
    Network net;
    std::string line;
    int line_no = 0;
    long declared_nodes = -1, declared_links = -1;
    bool in_metadata = true;

    std::set<NodeId> node_set;
    while (std::getline(net_text, line)) {
        ++line_no;
        if (in_metadata) {
            auto lpos = line.find('<');
            if (lpos != std::string::npos) {
                auto rpos = line.find('>');
                if (rpos == std::string::npos)
                    throw ParseError("line " + std::to_string(line_no) + ": unterminated metadata tag");
                std::string tag = line.substr(lpos + 1, rpos - lpos - 1);
                std::string value = line.substr(rpos + 1);
                if (tag == "NUMBER OF NODES") declared_nodes = std::stol(value);
                else if (tag == "NUMBER OF LINKS") declared_links = std::stol(value);
                else if (tag == "END OF METADATA") in_metadata = false;
                continue;
            }
            if (is_blank(strip_comment(line))) continue;
            in_metadata = false;  // record section without explicit END tag
        }
        std::string body = strip_comment(line);
        if (is_blank(body)) continue;

        std::istringstream ss(body);
        std::vector<double> fields;
        double x;
        while (ss >> x) fields.push_back(x);
        if (!ss.eof() && ss.fail()) {
            std::string tok;
            ss.clear();
            ss >> tok;
            throw ParseError("line " + std::to_string(line_no) + ": bad token '" + tok + "'");
        }
        if (fields.size() < 4)
            throw ParseError("line " + std::to_string(line_no) + ": expected at least 4 fields");

        Link l;
        l.id = static_cast<int>(net.links.size());
        l.tail = static_cast<NodeId>(fields[0]);
        l.head = static_cast<NodeId>(fields[1]);
        l.capacity_param = fields[2];
        if (fields.size() >= 7) {
            // full TNTP record: tail head capacity length fft b power [speed toll type]
            l.free_flow_time = fields[4];
            l.bpr_alpha = fields[5];
            double beta = fields[6];
            if (beta < 1.0 || beta != std::floor(beta))
                throw ParseError("line " + std::to_string(line_no) +
                                 ": BPR exponent must be a positive integer");
            l.bpr_beta = static_cast<int>(beta);
        } else {
            // minimal record: tail head capacity fft
            l.free_flow_time = fields[3];
        }
        if (l.tail == l.head)
            throw ParseError("line " + std::to_string(line_no) + ": self loop");
        if (!(l.free_flow_time > 0.0))
            throw ParseError("line " + std::to_string(line_no) + ": free-flow time must be positive");
        if (!(l.capacity_param > 0.0))
            throw ParseError("line " + std::to_string(line_no) + ": capacity must be positive");
        if (l.bpr_alpha < 0.0)
            throw ParseError("line " + std::to_string(line_no) + ": negative BPR alpha");
        node_set.insert(l.tail);
        node_set.insert(l.head);
        net.links.push_back(l);
    }

    if (declared_links >= 0 && static_cast<long>(net.links.size()) != declared_links)
        throw ParseError("declared " + std::to_string(declared_links) + " links but found " +
                         std::to_string(net.links.size()));
    if (declared_nodes >= 0 && static_cast<long>(node_set.size()) > declared_nodes)
        throw ParseError("found more node ids than the declared " + std::to_string(declared_nodes));

    // declared-but-isolated nodes keep their ids
    if (declared_nodes > 0 && static_cast<long>(node_set.size()) < declared_nodes)
        for (long n = 1; n <= declared_nodes; ++n) node_set.insert(static_cast<NodeId>(n));

    net.nodes.assign(node_set.begin(), node_set.end());
    for (std::size_t i = 0; i < net.nodes.size(); ++i) net.node_index[net.nodes[i]] = static_cast<int>(i);
    net.out_links.assign(net.nodes.size(), {});
    for (const auto& l : net.links) net.out_links[net.node_index.at(l.tail)].push_back(l.id);

    // role sidecar
    std::vector<NodeId>* target = nullptr;
    line_no = 0;
    while (std::getline(roles_text, line)) {
        ++line_no;
        std::string body = strip_comment(line);
        if (is_blank(body)) continue;
        std::istringstream ss(body);
        std::string tok;
        while (ss >> tok) {
            if (tok == "ORIGINS") { target = &net.origins; continue; }
            if (tok == "DESTINATIONS") { target = &net.destinations; continue; }
            if (tok == "CANDIDATES") { target = &net.candidates; continue; }
            if (!target)
                throw ParseError("roles line " + std::to_string(line_no) +
                                 ": token before any section header");
            NodeId n;
            try {
                n = std::stoi(tok);
            } catch (const std::exception&) {
                throw ParseError("roles line " + std::to_string(line_no) + ": bad node id '" + tok + "'");
            }
            if (!net.has_node(n))
                throw ValidationError("roles: node id " + std::to_string(n) + " is not in the network");
            target->push_back(n);
        }
    }
    return net;
}

Network load_network(const std::string& net_path, const std::string& roles_path) {
    std::ifstream nf(net_path);
    if (!nf) throw ParseError("cannot open network file: " + net_path);
    std::ifstream rf(roles_path);
    if (!rf) throw ParseError("cannot open roles file: " + roles_path);
    return parse_network(nf, rf);
}

TripTable parse_trips(std::istream& text) {
    TripTable trips;
    std::string line;
    int line_no = 0;
    while (std::getline(text, line)) {
        ++line_no;
        std::string body = strip_comment(line);
        if (is_blank(body)) continue;
        std::istringstream ss(body);
        TripEntry e;
        if (!(ss >> e.origin >> e.destination >> e.demand >> e.service_quantity))
            throw ParseError("trips line " + std::to_string(line_no) +
                             ": expected 'r s d e [k1 k2 ...]'");
        NodeId k;
        while (ss >> k) e.allowed_facilities.push_back(k);
        trips.entries.push_back(std::move(e));
    }
    return trips;
}

TripTable load_trips(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open trip file: " + path);
    return parse_trips(f);
}

}  // namespace isfp
