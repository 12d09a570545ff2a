// Typed client for the dafny-pilot engine service (HTTP+JSON, loopback).
export class ServiceError extends Error {
    constructor(status, message) {
        super(message);
        this.status = status;
    }
}
export class EngineApi {
    constructor(baseUrl = "", fetchImpl = fetch) {
        this.baseUrl = baseUrl;
        this.fetchImpl = fetchImpl;
    }
    async request(method, path, body) {
        const response = await this.fetchImpl(this.baseUrl + path, {
            method,
            headers: body === undefined ? {} : { "Content-Type": "application/json" },
            body: body === undefined ? undefined : JSON.stringify(body),
        });
        if (!response.ok) {
            let detail = `${response.status}`;
            try {
                const data = await response.json();
                if (data && data.detail)
                    detail = String(data.detail);
            }
            catch {
                // non-JSON error body; keep the status text
            }
            throw new ServiceError(response.status, detail);
        }
        return (await response.json());
    }
    createSession(source, task, path = "session.dfy") {
        return this.request("POST", "/v1/sessions", { source, task, path });
    }
    suggest(sessionId) {
        return this.request("POST", `/v1/sessions/${sessionId}/suggest`);
    }
    accept(sessionId, index) {
        return this.request("POST", `/v1/sessions/${sessionId}/candidates/${index}/accept`);
    }
    reject(sessionId, index) {
        return this.request("POST", `/v1/sessions/${sessionId}/candidates/${index}/reject`);
    }
    events(sessionId, since = 0) {
        return this.request("GET", `/v1/sessions/${sessionId}/events?since=${since}`);
    }
    health() {
        return this.request("GET", "/v1/health");
    }
}
